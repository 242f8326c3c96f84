//! Schema validation. Every check corresponds to one design step of a
//! dimensional model (grain, dimensions, facts, pre-calculations, duration,
//! conformance, query priorities); violations are reported, never raised.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use super::schema::{ScdPolicy, SchemaDef, SYSTEM_ATTRIBUTES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    DuplicateDimension(String),
    DuplicateAttribute { dimension: String, attribute: String },
    NaturalKeyMissing { dimension: String, natural_key: String },
    ReservedAttribute { dimension: String, attribute: String },
    DuplicateFactTable(String),
    GrainEmpty(String),
    UnknownGrainDimension { fact: String, dimension: String },
    DuplicateGrainDimension { fact: String, dimension: String },
    NoMeasures(String),
    DuplicateMeasure { fact: String, measure: String },
    MissingFormula { fact: String, measure: String },
    UnexpectedFormula { fact: String, measure: String },
    InvalidFormula { fact: String, measure: String, reason: String },
    NonPositiveDuration { fact: String, days: i64 },
    ConformanceViolation(String),
    UnknownPriorityFact(String),
    DuplicatePriority(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateDimension(d) => write!(f, "dimension {d:?} declared more than once"),
            DuplicateAttribute { dimension, attribute } => {
                write!(f, "dimension {dimension:?}: attribute {attribute:?} declared more than once")
            }
            NaturalKeyMissing { dimension, natural_key } => {
                write!(f, "dimension {dimension:?}: natural key {natural_key:?} is not an attribute")
            }
            ReservedAttribute { dimension, attribute } => {
                write!(f, "dimension {dimension:?}: attribute {attribute:?} is engine-managed")
            }
            DuplicateFactTable(t) => write!(f, "fact table {t:?} declared more than once"),
            GrainEmpty(t) => write!(f, "fact table {t:?}: grain is empty"),
            UnknownGrainDimension { fact, dimension } => {
                write!(f, "fact table {fact:?}: grain references unknown dimension {dimension:?}")
            }
            DuplicateGrainDimension { fact, dimension } => {
                write!(f, "fact table {fact:?}: dimension {dimension:?} repeated in grain")
            }
            NoMeasures(t) => write!(f, "fact table {t:?}: no measures"),
            DuplicateMeasure { fact, measure } => write!(f, "fact table {fact:?}: measure {measure:?} repeated"),
            MissingFormula { fact, measure } => {
                write!(f, "fact table {fact:?}: precomputed measure {measure:?} has no formula")
            }
            UnexpectedFormula { fact, measure } => {
                write!(f, "fact table {fact:?}: raw measure {measure:?} declares a formula")
            }
            InvalidFormula { fact, measure, reason } => {
                write!(f, "fact table {fact:?}: measure {measure:?} formula: {reason}")
            }
            NonPositiveDuration { fact, days } => {
                write!(f, "fact table {fact:?}: duration {days} days is not positive")
            }
            ConformanceViolation(d) => write!(f, "dimension {d:?} is shared by several fact tables but not conformed"),
            UnknownPriorityFact(t) => write!(f, "query priority names unknown fact table {t:?}"),
            DuplicatePriority(t) => write!(f, "fact table {t:?} listed twice in query priorities"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_schema(schema: &SchemaDef) -> ValidationReport {
    let mut out = Vec::new();

    let mut dim_count: HashMap<&str, usize> = HashMap::new();
    for d in &schema.dimensions {
        *dim_count.entry(d.name.as_str()).or_default() += 1;
    }
    let mut reported = HashSet::new();
    for d in &schema.dimensions {
        if dim_count[d.name.as_str()] > 1 && reported.insert(d.name.as_str()) {
            out.push(Violation::DuplicateDimension(d.name.clone()));
        }
        let mut seen = HashSet::new();
        for a in &d.attributes {
            if !seen.insert(a.name.as_str()) {
                out.push(Violation::DuplicateAttribute { dimension: d.name.clone(), attribute: a.name.clone() });
            }
            if d.scd_policy == ScdPolicy::Versioned && SYSTEM_ATTRIBUTES.contains(&a.name.as_str()) {
                out.push(Violation::ReservedAttribute { dimension: d.name.clone(), attribute: a.name.clone() });
            }
        }
        if d.natural_key_index().is_none() {
            out.push(Violation::NaturalKeyMissing { dimension: d.name.clone(), natural_key: d.natural_key.clone() });
        }
    }

    let mut fact_seen = HashSet::new();
    let mut users: HashMap<&str, HashSet<&str>> = HashMap::new();
    for f in &schema.fact_tables {
        if !fact_seen.insert(f.name.as_str()) {
            out.push(Violation::DuplicateFactTable(f.name.clone()));
        }
        if f.grain.is_empty() {
            out.push(Violation::GrainEmpty(f.name.clone()));
        }
        let mut grain_seen = HashSet::new();
        for g in &f.grain {
            if !grain_seen.insert(g.as_str()) {
                out.push(Violation::DuplicateGrainDimension { fact: f.name.clone(), dimension: g.clone() });
            }
            if dim_count.contains_key(g.as_str()) {
                users.entry(g.as_str()).or_default().insert(f.name.as_str());
            } else {
                out.push(Violation::UnknownGrainDimension { fact: f.name.clone(), dimension: g.clone() });
            }
        }
        if f.measures.is_empty() {
            out.push(Violation::NoMeasures(f.name.clone()));
        }
        let mut m_seen = HashSet::new();
        for m in &f.measures {
            if !m_seen.insert(m.name.as_str()) {
                out.push(Violation::DuplicateMeasure { fact: f.name.clone(), measure: m.name.clone() });
            }
            match (m.precomputed, &m.formula) {
                (true, None) => out.push(Violation::MissingFormula { fact: f.name.clone(), measure: m.name.clone() }),
                (false, Some(_)) => {
                    out.push(Violation::UnexpectedFormula { fact: f.name.clone(), measure: m.name.clone() })
                }
                (true, Some(src)) => {
                    if let Err(e) = Formula::parse(src) {
                        out.push(Violation::InvalidFormula {
                            fact: f.name.clone(),
                            measure: m.name.clone(),
                            reason: e.to_string(),
                        });
                    }
                }
                (false, None) => {}
            }
        }
        if f.duration_days <= 0 {
            out.push(Violation::NonPositiveDuration { fact: f.name.clone(), days: f.duration_days });
        }
    }

    let mut conf_reported = HashSet::new();
    for d in &schema.dimensions {
        let shared = users.get(d.name.as_str()).map_or(0, HashSet::len) >= 2;
        let conformed = schema.dimensions.iter().filter(|x| x.name == d.name).all(|x| x.conformed);
        if shared && !conformed && conf_reported.insert(d.name.as_str()) {
            out.push(Violation::ConformanceViolation(d.name.clone()));
        }
    }

    let mut prio_seen = HashSet::new();
    for p in &schema.query_priorities {
        if !prio_seen.insert(p.as_str()) {
            out.push(Violation::DuplicatePriority(p.clone()));
        }
        if !fact_seen.contains(p.as_str()) {
            out.push(Violation::UnknownPriorityFact(p.clone()));
        }
    }

    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::schema::*;
    use crate::value::ScalarKind;

    fn dim(name: &str, conformed: bool) -> DimensionDef {
        DimensionDef {
            name: name.into(),
            attributes: vec![AttributeDef::new("code", ScalarKind::Text), AttributeDef::new("city", ScalarKind::Text)],
            natural_key: "code".into(),
            scd_policy: ScdPolicy::Overwrite,
            conformed,
        }
    }

    fn fact(name: &str, grain: &[&str]) -> FactTableDef {
        FactTableDef {
            name: name.into(),
            grain: grain.iter().map(|s| s.to_string()).collect(),
            measures: vec![MeasureDef::raw("amount", Aggregator::Sum)],
            duration_days: 30,
        }
    }

    fn well_formed() -> SchemaDef {
        SchemaDef {
            query_priorities: vec!["sales".into()],
            dimensions: vec![dim("customer", false), dim("product", false)],
            fact_tables: vec![fact("sales", &["customer", "product"])],
        }
    }

    #[test]
    fn well_formed_schema_is_valid() {
        assert_eq!(validate_schema(&well_formed()).violations, vec![]);
    }

    #[test]
    fn empty_grain_reported() {
        let mut s = well_formed();
        s.fact_tables[0].grain.clear();
        assert_eq!(validate_schema(&s).violations, vec![Violation::GrainEmpty("sales".into())]);
    }

    #[test]
    fn shared_dimension_must_be_conformed() {
        let mut s = well_formed();
        s.fact_tables.push(fact("returns", &["customer"]));
        assert_eq!(validate_schema(&s).violations, vec![Violation::ConformanceViolation("customer".into())]);
        s.dimensions[0].conformed = true;
        assert!(validate_schema(&s).is_valid());
    }

    #[test]
    fn reports_every_violation_in_stable_order() {
        let mut s = well_formed();
        s.dimensions[1].natural_key = "sku".into();
        s.dimensions[1].attributes.push(AttributeDef::new("city", ScalarKind::Text));
        s.fact_tables[0].grain.push("store".into());
        s.fact_tables[0].duration_days = 0;
        s.fact_tables[0].measures.push(MeasureDef {
            name: "margin".into(),
            aggregator: Aggregator::Sum,
            precomputed: true,
            formula: None,
        });
        s.query_priorities.push("ghost".into());
        let v = validate_schema(&s).violations;
        assert_eq!(
            v,
            vec![
                Violation::DuplicateAttribute { dimension: "product".into(), attribute: "city".into() },
                Violation::NaturalKeyMissing { dimension: "product".into(), natural_key: "sku".into() },
                Violation::UnknownGrainDimension { fact: "sales".into(), dimension: "store".into() },
                Violation::MissingFormula { fact: "sales".into(), measure: "margin".into() },
                Violation::NonPositiveDuration { fact: "sales".into(), days: 0 },
                Violation::UnknownPriorityFact("ghost".into()),
            ]
        );
        assert_eq!(validate_schema(&s), validate_schema(&s));
    }

    #[test]
    fn versioned_dimension_reserves_system_attributes() {
        let mut s = well_formed();
        s.dimensions[0].scd_policy = ScdPolicy::Versioned;
        s.dimensions[0].attributes.push(AttributeDef::new("valid_from", ScalarKind::Timestamp));
        assert_eq!(
            validate_schema(&s).violations,
            vec![Violation::ReservedAttribute { dimension: "customer".into(), attribute: "valid_from".into() }]
        );
    }

    #[test]
    fn bad_formula_and_duplicates() {
        let mut s = well_formed();
        s.dimensions.push(dim("customer", false));
        s.fact_tables[0].measures.push(MeasureDef::derived("m2", Aggregator::Sum, "amount *"));
        s.fact_tables[0].measures.push(MeasureDef::raw("amount", Aggregator::Max));
        let v = validate_schema(&s).violations;
        assert!(v.contains(&Violation::DuplicateDimension("customer".into())));
        assert!(v.contains(&Violation::DuplicateMeasure { fact: "sales".into(), measure: "amount".into() }));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidFormula { measure, .. } if measure == "m2")));
    }
}
