use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EtlError, SourceRecord};
use crate::model::SchemaDef;
use crate::storage::Snapshot;
use crate::value::{Fixed, ScalarKind, Value};

/// Label under which framing errors are counted.
pub const FRAMING_RULE: &str = "framing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleKind {
    NotNull {
        field: String,
    },
    TypeConforms {
        field: String,
        kind: ScalarKind,
    },
    /// Inclusive numeric range.
    Range {
        field: String,
        lo: Fixed,
        hi: Fixed,
    },
    /// The value is a natural key of a member of `dimension`.
    ReferentialMember {
        field: String,
        dimension: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    #[default]
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRule {
    #[serde(flatten)]
    pub kind: RuleKind,
    #[serde(default)]
    pub severity: Severity,
}

impl CleanRule {
    pub fn not_null(field: impl Into<String>) -> Self {
        Self::reject(RuleKind::NotNull { field: field.into() })
    }

    pub fn type_conforms(field: impl Into<String>, kind: ScalarKind) -> Self {
        Self::reject(RuleKind::TypeConforms { field: field.into(), kind })
    }

    pub fn range(field: impl Into<String>, lo: Fixed, hi: Fixed) -> Self {
        Self::reject(RuleKind::Range { field: field.into(), lo, hi })
    }

    pub fn referential(field: impl Into<String>, dimension: impl Into<String>) -> Self {
        Self::reject(RuleKind::ReferentialMember { field: field.into(), dimension: dimension.into() })
    }

    fn reject(kind: RuleKind) -> Self {
        CleanRule { kind, severity: Severity::Reject }
    }

    pub fn field(&self) -> &str {
        match &self.kind {
            RuleKind::NotNull { field }
            | RuleKind::TypeConforms { field, .. }
            | RuleKind::Range { field, .. }
            | RuleKind::ReferentialMember { field, .. } => field,
        }
    }

    /// Checks that the rule's field is among `fields` and that a
    /// referenced dimension exists.
    pub fn validate(&self, fields: &[&str], schema: &SchemaDef) -> Result<(), EtlError> {
        let bad = |reason: String| EtlError::InvalidRule { rule: self.to_string(), reason };
        if !fields.contains(&self.field()) {
            return Err(bad(format!("field `{}` is not mapped", self.field())));
        }
        match &self.kind {
            RuleKind::ReferentialMember { dimension, .. } if schema.dimension(dimension).is_none() => {
                Err(bad(format!("unknown dimension `{dimension}`")))
            }
            RuleKind::Range { lo, hi, .. } if lo > hi => Err(bad("empty range".into())),
            _ => Ok(()),
        }
    }

    fn passes(&self, rec: &SourceRecord, dims: Option<&Snapshot>) -> bool {
        let v = rec.get(self.field());
        match &self.kind {
            RuleKind::NotNull { .. } => !v.is_null(),
            RuleKind::TypeConforms { kind, .. } => v.is_null() || typed(v, *kind).is_some(),
            RuleKind::Range { lo, hi, .. } => match typed(v, ScalarKind::Decimal) {
                Some(Value::Decimal(x)) => *lo <= x && x <= *hi,
                _ => false,
            },
            RuleKind::ReferentialMember { dimension, .. } => {
                let Some(dim) = dims.and_then(|s| s.dimension(dimension)) else { return false };
                let kind = dim.def().natural_key_index().map_or(ScalarKind::Text, |i| dim.def().attributes[i].kind);
                typed(v, kind).is_some_and(|k| !k.is_null() && dim.contains(&k))
            }
        }
    }
}

impl fmt::Display for CleanRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RuleKind::NotNull { field } => write!(f, "not_null({field})"),
            RuleKind::TypeConforms { field, kind } => write!(f, "type_conforms({field}, {kind:?})"),
            RuleKind::Range { field, lo, hi } => write!(f, "range({field}, {lo}, {hi})"),
            RuleKind::ReferentialMember { field, dimension } => write!(f, "referential_member({field}, {dimension})"),
        }
    }
}

/// Interprets a raw value as `kind`: text is parsed, typed values coerced.
pub(crate) fn typed(v: &Value, kind: ScalarKind) -> Option<Value> {
    match v {
        Value::Text(t) if kind != ScalarKind::Text => Value::parse_as(t, kind),
        Value::Decimal(d) if kind == ScalarKind::Integer && d.units() % Fixed::SCALE == 0 => {
            Some(Value::Integer(d.units() / Fixed::SCALE))
        }
        other => other.coerce(kind),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Rejections per rule label, in rule order with framing errors
    /// first. A record is charged to the first rule it fails.
    pub per_rule: IndexMap<String, u64>,
    /// `accepted / max(rejected, 1)`.
    pub snr: f64,
}

impl CleanReport {
    pub fn snr_of(accepted: u64, rejected: u64) -> f64 {
        accepted as f64 / rejected.max(1) as f64
    }
}

/// Splits records into accepted and rejected. A record is rejected iff it
/// has a framing error or fails at least one rule. `dims` resolves
/// referential rules; without it they always fail.
pub fn clean(
    records: impl IntoIterator<Item = SourceRecord>,
    rules: &[CleanRule],
    dims: Option<&Snapshot>,
) -> (Vec<SourceRecord>, CleanReport) {
    let mut per_rule: IndexMap<String, u64> = IndexMap::new();
    per_rule.insert(FRAMING_RULE.to_string(), 0);
    let labels: Vec<String> = rules.iter().map(|r| r.to_string()).collect();
    for l in &labels {
        per_rule.entry(l.clone()).or_insert(0);
    }
    let mut accepted = Vec::new();
    let (mut input, mut rejected) = (0u64, 0u64);
    for rec in records {
        input += 1;
        let failed = if rec.framing_error.is_some() {
            Some(FRAMING_RULE)
        } else {
            rules.iter().zip(&labels).find(|(r, _)| !r.passes(&rec, dims)).map(|(_, l)| l.as_str())
        };
        match failed {
            Some(label) => {
                rejected += 1;
                *per_rule.get_mut(label).expect("label registered") += 1;
            }
            None => accepted.push(rec),
        }
    }
    let n = accepted.len() as u64;
    let report = CleanReport { input, accepted: n, rejected, per_rule, snr: CleanReport::snr_of(n, rejected) };
    (accepted, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: Value) -> SourceRecord {
        let mut fields = IndexMap::new();
        fields.insert("x".to_string(), v);
        SourceRecord::new("t", fields, 0)
    }

    #[test]
    fn snr_examples() {
        let mut recs: Vec<_> = (0..8).map(|i| rec(Value::Integer(i))).collect();
        recs.push(rec(Value::Null));
        recs.push(rec(Value::Null));
        let (ok, r) = clean(recs, &[CleanRule::not_null("x")], None);
        assert_eq!((ok.len(), r.accepted, r.rejected, r.snr), (8, 8, 2, 4.0));
        assert_eq!(r.per_rule["not_null(x)"], 2);

        let (_, r) = clean((0..5).map(|i| rec(Value::Integer(i))), &[CleanRule::not_null("x")], None);
        assert_eq!(r.snr, 5.0);
        let (_, r) = clean((0..4).map(|_| rec(Value::Null)), &[CleanRule::not_null("x")], None);
        assert_eq!(r.snr, 0.0);
    }

    #[test]
    fn first_failing_rule_is_charged() {
        let rules = [
            CleanRule::type_conforms("x", ScalarKind::Decimal),
            CleanRule::range("x", Fixed::from_int(0), Fixed::from_int(10)),
        ];
        let recs = vec![rec(Value::text("abc")), rec(Value::text("11")), rec(Value::text("2.5")), rec(Value::Null)];
        let (ok, r) = clean(recs, &rules, None);
        assert_eq!(ok.len(), 1);
        assert_eq!(r.per_rule.values().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(r.accepted + r.rejected, r.input);
    }

    #[test]
    fn framing_errors_are_noise() {
        let mut bad = rec(Value::Null);
        bad.framing_error = Some("garbled".into());
        let (ok, r) = clean(vec![bad, rec(Value::Integer(1))], &[], None);
        assert_eq!(ok.len(), 1);
        assert_eq!(r.per_rule[FRAMING_RULE], 1);
    }

    #[test]
    fn rule_serde() {
        let rule: CleanRule = toml::from_str("rule = \"range\"\nfield = \"fare\"\nlo = 0\nhi = \"999.5\"").unwrap();
        assert_eq!(rule, CleanRule::range("fare", Fixed::ZERO, "999.5".parse().unwrap()));
    }
}
