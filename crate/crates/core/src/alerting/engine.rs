use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::Receiver;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::outbox::{AlertSink, Outbox};
use super::{AlertError, AlertEvent, AlertRule, Comparison, CycleLadder, DedupKey, Trigger};
use crate::query::{QueryEngine, QueryError};
use crate::storage::{CommitNotice, Epoch, Snapshot};
use crate::value::Timestamp;

/// One evaluation of a rule's query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `None` when the query matched no rows; the predicate is then false.
    pub value: Option<f64>,
    pub epoch: Epoch,
    /// Simulated run time. The rule stays busy until `now + cost_ticks`.
    pub cost_ticks: i64,
}

pub trait RuleEvaluator: Send + Sync {
    /// Runs the rule's query, against `at` when given (on-commit rules) or
    /// a fresh snapshot otherwise.
    fn evaluate(&self, rule: &AlertRule, now: Timestamp, at: Option<&Snapshot>) -> Result<Evaluation, QueryError>;
}

/// Runs rules through a [`QueryEngine`] at zero simulated cost.
pub struct QueryEvaluator {
    engine: Arc<QueryEngine>,
}

impl QueryEvaluator {
    pub fn new(engine: Arc<QueryEngine>) -> Self {
        QueryEvaluator { engine }
    }
}

impl RuleEvaluator for QueryEvaluator {
    fn evaluate(&self, rule: &AlertRule, _: Timestamp, at: Option<&Snapshot>) -> Result<Evaluation, QueryError> {
        let result = match at {
            Some(snapshot) => self.engine.execute_at(&rule.spec, snapshot, None)?.0,
            None => self.engine.execute(&rule.spec)?,
        };
        Ok(Evaluation { value: result.scalar().and_then(|v| v.to_f64()), epoch: result.metadata.epoch, cost_ticks: 0 })
    }
}

/// Adds a fixed simulated cost per rule to another evaluator.
pub struct SimulatedCost<E> {
    inner: E,
    default_ticks: i64,
    per_rule: HashMap<String, i64>,
}

impl<E: RuleEvaluator> SimulatedCost<E> {
    pub fn new(inner: E, default_ticks: i64) -> Self {
        SimulatedCost { inner, default_ticks, per_rule: HashMap::new() }
    }

    pub fn with_rule_cost(mut self, rule_id: impl Into<String>, ticks: i64) -> Self {
        self.per_rule.insert(rule_id.into(), ticks);
        self
    }
}

impl<E: RuleEvaluator> RuleEvaluator for SimulatedCost<E> {
    fn evaluate(&self, rule: &AlertRule, now: Timestamp, at: Option<&Snapshot>) -> Result<Evaluation, QueryError> {
        let mut e = self.inner.evaluate(rule, now, at)?;
        e.cost_ticks = self.per_rule.get(&rule.id).copied().unwrap_or(self.default_ticks);
        Ok(e)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertStats {
    pub evaluations: u64,
    pub fired: u64,
    /// Predicate held but the cycle had already fired.
    pub deduplicated: u64,
    pub skipped_overlap: u64,
    pub evaluation_failures: u64,
}

#[derive(Default)]
struct Counters {
    evaluations: AtomicU64,
    fired: AtomicU64,
    deduplicated: AtomicU64,
    skipped_overlap: AtomicU64,
    evaluation_failures: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

#[derive(Default)]
struct SlotState {
    busy_until: Option<Timestamp>,
    last_level: Option<bool>,
    fired: HashSet<i64>,
}

struct Slot {
    rule: AlertRule,
    period: i64,
    in_flight: AtomicBool,
    state: Mutex<SlotState>,
}

struct InFlight<'a>(&'a AtomicBool);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// Owns rule registration, scheduling state and the outbox. Safe to share
/// across threads; evaluations of one rule never overlap.
pub struct AlertEngine {
    evaluator: Arc<dyn RuleEvaluator>,
    ladder: CycleLadder,
    rules: RwLock<BTreeMap<String, Arc<Slot>>>,
    outbox: Outbox,
    counters: Counters,
}

impl AlertEngine {
    pub fn new(evaluator: Arc<dyn RuleEvaluator>, ladder: CycleLadder) -> Self {
        AlertEngine {
            evaluator,
            ladder,
            rules: RwLock::new(BTreeMap::new()),
            outbox: Outbox::new(),
            counters: Counters::default(),
        }
    }

    pub fn over(engine: Arc<QueryEngine>, ladder: CycleLadder) -> Self {
        Self::new(Arc::new(QueryEvaluator::new(engine)), ladder)
    }

    pub fn ladder(&self) -> CycleLadder {
        self.ladder
    }

    pub fn register_rule(&self, rule: AlertRule) -> Result<String, AlertError> {
        if !rule.spec.is_scalar() {
            return Err(AlertError::GroupedSpecNotScalar(rule.id));
        }
        let period = self.ladder.ticks(rule.trigger.minutes())?;
        let mut rules = self.rules.write();
        if rules.contains_key(&rule.id) {
            return Err(AlertError::DuplicateRuleId(rule.id));
        }
        let id = rule.id.clone();
        let slot = Slot { rule, period, in_flight: AtomicBool::new(false), state: Mutex::new(SlotState::default()) };
        rules.insert(id.clone(), Arc::new(slot));
        Ok(id)
    }

    pub fn remove_rule(&self, rule_id: &str) -> Result<(), AlertError> {
        self.rules.write().remove(rule_id).map(|_| ()).ok_or_else(|| AlertError::UnknownRule(rule_id.to_string()))
    }

    pub fn rules(&self) -> Vec<AlertRule> {
        self.rules.read().values().map(|s| s.rule.clone()).collect()
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    pub fn drain_outbox(&self, sink: &mut dyn AlertSink) -> Result<usize, AlertError> {
        self.outbox.drain(sink)
    }

    pub fn stats(&self) -> AlertStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        AlertStats {
            evaluations: get(&c.evaluations),
            fired: get(&c.fired),
            deduplicated: get(&c.deduplicated),
            skipped_overlap: get(&c.skipped_overlap),
            evaluation_failures: get(&c.evaluation_failures),
        }
    }

    /// Evaluates one cycle rule now, whatever the schedule says.
    pub fn run_cycle(&self, rule_id: &str, now: Timestamp) -> Result<Option<AlertEvent>, AlertError> {
        let slot =
            self.rules.read().get(rule_id).cloned().ok_or_else(|| AlertError::UnknownRule(rule_id.to_string()))?;
        if !matches!(slot.rule.trigger, Trigger::Cycle { .. }) {
            return Err(AlertError::NotCycleRule(rule_id.to_string()));
        }
        Ok(self.evaluate(&slot, now, None))
    }

    /// Runs every cycle rule whose period divides `now`, in rule id order.
    pub fn tick(&self, now: Timestamp) -> Vec<AlertEvent> {
        let due: Vec<Arc<Slot>> = self
            .rules
            .read()
            .values()
            .filter(|s| matches!(s.rule.trigger, Trigger::Cycle { .. }) && now.rem_euclid(s.period) == 0)
            .cloned()
            .collect();
        due.iter().filter_map(|s| self.evaluate(s, now, None)).collect()
    }

    /// Evaluates the on-commit rules of the committed fact against the
    /// committing snapshot.
    pub fn on_event(&self, notice: &CommitNotice) -> Vec<AlertEvent> {
        let due: Vec<Arc<Slot>> = self
            .rules
            .read()
            .values()
            .filter(|s| matches!(s.rule.trigger, Trigger::OnEvent { .. }) && s.rule.fact() == notice.target)
            .cloned()
            .collect();
        due.iter().filter_map(|s| self.evaluate(s, notice.at, Some(&notice.snapshot))).collect()
    }

    /// Handles every notice already waiting on `rx`.
    pub fn pump(&self, rx: &Receiver<CommitNotice>) -> Vec<AlertEvent> {
        rx.try_iter().flat_map(|n| self.on_event(&n)).collect()
    }

    fn evaluate(&self, slot: &Slot, now: Timestamp, at: Option<&Snapshot>) -> Option<AlertEvent> {
        if slot.in_flight.swap(true, Ordering::AcqRel) {
            bump(&self.counters.skipped_overlap);
            return None;
        }
        let _guard = InFlight(&slot.in_flight);
        if slot.state.lock().busy_until.is_some_and(|b| now < b) {
            bump(&self.counters.skipped_overlap);
            return None;
        }
        bump(&self.counters.evaluations);
        let eval = match self.evaluator.evaluate(&slot.rule, now, at) {
            Ok(e) => e,
            Err(_) => {
                bump(&self.counters.evaluation_failures);
                return None;
            }
        };
        let rule = &slot.rule;
        let mut st = slot.state.lock();
        st.busy_until = Some(now.saturating_add(eval.cost_ticks.max(0)));
        let level = eval.value.is_some_and(|v| rule.comparison.level(v, rule.threshold));
        let fire = match rule.comparison {
            Comparison::Crosses => level && !st.last_level.unwrap_or(false),
            _ => level,
        };
        st.last_level = Some(level);
        if !fire {
            return None;
        }
        let cycle = now.div_euclid(slot.period);
        if !st.fired.insert(cycle) {
            bump(&self.counters.deduplicated);
            return None;
        }
        st.fired.retain(|&c| c >= cycle - 2);
        drop(st);
        let event = AlertEvent {
            rule_id: rule.id.clone(),
            fired_at: now.saturating_add(eval.cost_ticks.max(0)),
            observed_value: eval.value.unwrap_or(f64::NAN),
            threshold: rule.threshold,
            epoch: eval.epoch,
            dedup_key: DedupKey { rule_id: rule.id.clone(), cycle },
        };
        if self.outbox.push(event.clone()) {
            bump(&self.counters.fired);
            Some(event)
        } else {
            bump(&self.counters.deduplicated);
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QuerySpec;

    /// Reports a scripted value per tick.
    struct Script(Box<dyn Fn(Timestamp) -> Option<f64> + Send + Sync>);

    impl RuleEvaluator for Script {
        fn evaluate(&self, _: &AlertRule, now: Timestamp, _: Option<&Snapshot>) -> Result<Evaluation, QueryError> {
            Ok(Evaluation { value: (self.0)(now), epoch: Epoch(now as u64), cost_ticks: 0 })
        }
    }

    fn engine(f: impl Fn(Timestamp) -> Option<f64> + Send + Sync + 'static) -> AlertEngine {
        AlertEngine::new(Arc::new(Script(Box::new(f))), CycleLadder::new(10))
    }

    fn rule(id: &str, cmp: Comparison, minutes: i64) -> AlertRule {
        let spec = QuerySpec::new("f").aggregate(crate::model::Aggregator::Sum, "m");
        AlertRule::new(id, spec, cmp, 5.0, Trigger::Cycle { minutes })
    }

    #[test]
    fn registration() {
        let e = engine(|_| None);
        e.register_rule(rule("a", Comparison::Gt, 1)).unwrap();
        assert!(matches!(e.register_rule(rule("a", Comparison::Gt, 1)), Err(AlertError::DuplicateRuleId(_))));
        let mut grouped = rule("g", Comparison::Gt, 1);
        grouped.spec = grouped.spec.group(crate::query::Field::EventTime);
        assert!(matches!(e.register_rule(grouped), Err(AlertError::GroupedSpecNotScalar(_))));
        assert!(matches!(e.register_rule(rule("p", Comparison::Gt, 7)), Err(AlertError::InvalidPeriod(7))));
        assert!(matches!(e.remove_rule("zzz"), Err(AlertError::UnknownRule(_))));
        e.remove_rule("a").unwrap();
        assert!(e.rules().is_empty());
    }

    #[test]
    fn one_event_per_cycle() {
        let e = engine(|_| Some(9.0));
        e.register_rule(rule("a", Comparison::Gt, 1)).unwrap();
        assert!(e.run_cycle("a", 70).unwrap().is_some());
        assert!(e.run_cycle("a", 75).unwrap().is_none());
        assert_eq!(e.outbox().len(), 1);
        assert_eq!(e.stats().deduplicated, 1);
        let ev = e.run_cycle("a", 80).unwrap().unwrap();
        assert_eq!(ev.dedup_key.cycle, 8);
    }

    #[test]
    fn crosses_is_edge_triggered() {
        let e = engine(|t| Some(if (30..60).contains(&t) || t >= 90 { 9.0 } else { 1.0 }));
        e.register_rule(rule("c", Comparison::Crosses, 1)).unwrap();
        let fired: Vec<i64> = (1..=12).flat_map(|i| e.tick(i * 10)).map(|ev| ev.dedup_key.cycle).collect();
        assert_eq!(fired, vec![3, 9]);
    }

    #[test]
    fn empty_result_is_false() {
        let e = engine(|_| None);
        e.register_rule(rule("a", Comparison::Lt, 1)).unwrap();
        assert!(e.tick(10).is_empty());
    }

    #[test]
    fn slow_evaluation_skips() {
        let inner = Script(Box::new(|_| Some(9.0)));
        let e = AlertEngine::new(Arc::new(SimulatedCost::new(inner, 0).with_rule_cost("a", 20)), CycleLadder::new(10));
        e.register_rule(rule("a", Comparison::Gt, 1)).unwrap();
        let fired: Vec<i64> = (1..=6).flat_map(|i| e.tick(i * 10)).map(|ev| ev.dedup_key.cycle).collect();
        assert_eq!(fired, vec![1, 3, 5]);
        assert_eq!(e.stats().skipped_overlap, 3);
    }
}
