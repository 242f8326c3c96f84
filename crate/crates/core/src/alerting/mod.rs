//! Threshold alerts over scalar aggregate queries.
//!
//! A rule fires on a cycle schedule drawn from a fixed ladder of periods,
//! or when a commit lands on its fact table. Each rule fires at most once
//! per cycle (its dedup key is the rule and the cycle index), and a rule
//! whose previous evaluation is still running skips the new one rather
//! than queueing it. Fired events wait in an [`Outbox`] until delivered.

mod engine;
mod outbox;
mod rule;

pub use engine::{AlertEngine, AlertStats, Evaluation, QueryEvaluator, RuleEvaluator, SimulatedCost};
pub use outbox::{AlertSink, CollectorSink, JsonLinesSink, Outbox, SinkError};
pub use rule::{parse_rule, parse_rules};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::query::{Freshness, QueryError, QuerySpec};
use crate::storage::Epoch;
use crate::value::Timestamp;

/// Periods, in minutes, a cycle rule may use.
pub const CYCLE_MINUTES: [i64; 4] = [1, 5, 15, 30];

/// Scales the minute ladder to clock ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleLadder {
    pub ticks_per_minute: i64,
}

impl CycleLadder {
    pub fn new(ticks_per_minute: i64) -> Self {
        assert!(ticks_per_minute > 0, "ticks_per_minute must be positive");
        CycleLadder { ticks_per_minute }
    }

    pub fn ticks(&self, minutes: i64) -> Result<i64, AlertError> {
        if CYCLE_MINUTES.contains(&minutes) {
            Ok(minutes * self.ticks_per_minute)
        } else {
            Err(AlertError::InvalidPeriod(minutes))
        }
    }
}

impl Default for CycleLadder {
    /// One tick per second.
    fn default() -> Self {
        CycleLadder { ticks_per_minute: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Gt,
    Lt,
    Ge,
    Le,
    /// Fires when `value >= threshold` becomes true after having been false
    /// (or never evaluated) at the previous evaluation.
    Crosses,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Gt => ">",
            Comparison::Lt => "<",
            Comparison::Ge => ">=",
            Comparison::Le => "<=",
            Comparison::Crosses => "crosses",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            ">" => Comparison::Gt,
            "<" => Comparison::Lt,
            ">=" | "≥" => Comparison::Ge,
            "<=" | "≤" => Comparison::Le,
            "crosses" => Comparison::Crosses,
            _ => return None,
        })
    }

    /// Whether the comparison holds at one evaluation point.
    pub fn level(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Gt => value > threshold,
            Comparison::Lt => value < threshold,
            Comparison::Ge | Comparison::Crosses => value >= threshold,
            Comparison::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Cycle {
        minutes: i64,
    },
    /// Evaluated on every commit to the rule's fact table; dedup applies
    /// per window.
    OnEvent {
        window_minutes: i64,
    },
}

impl Trigger {
    pub fn minutes(&self) -> i64 {
        match *self {
            Trigger::Cycle { minutes } => minutes,
            Trigger::OnEvent { window_minutes } => window_minutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub id: String,
    pub spec: QuerySpec,
    pub comparison: Comparison,
    pub threshold: f64,
    pub trigger: Trigger,
}

impl AlertRule {
    /// The query always runs at real-time freshness.
    pub fn new(
        id: impl Into<String>,
        spec: QuerySpec,
        comparison: Comparison,
        threshold: f64,
        trigger: Trigger,
    ) -> Self {
        AlertRule { id: id.into(), spec: spec.freshness(Freshness::RealTime), comparison, threshold, trigger }
    }

    pub fn fact(&self) -> &str {
        &self.spec.fact
    }
}

/// Renders the line form accepted by [`parse_rule`].
impl fmt::Display for AlertRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} FIRE WHEN {} {}", self.id, self.spec, self.comparison.symbol(), self.threshold)?;
        match self.trigger {
            Trigger::Cycle { minutes } => write!(f, " EVERY {minutes}m"),
            Trigger::OnEvent { window_minutes } => write!(f, " ON EVENT WINDOW {window_minutes}m"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DedupKey {
    pub rule_id: String,
    pub cycle: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub rule_id: String,
    pub fired_at: Timestamp,
    pub observed_value: f64,
    pub threshold: f64,
    pub epoch: Epoch,
    pub dedup_key: DedupKey,
}

#[derive(Debug, thiserror::Error)]
pub enum AlertError {
    #[error("rule `{0}` is already registered")]
    DuplicateRuleId(String),
    #[error("rule `{0}` must aggregate one value without grouping")]
    GroupedSpecNotScalar(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule `{0}` is not a cycle rule")]
    NotCycleRule(String),
    #[error("period of {0} minutes is not in the cycle ladder {CYCLE_MINUTES:?}")]
    InvalidPeriod(i64),
    #[error("rule line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("alert sink unavailable after {delivered} deliveries: {reason}")]
    SinkUnavailable { delivered: usize, reason: String },
    #[error(transparent)]
    Query(#[from] QueryError),
}
