use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::clean::typed;
use super::{EtlError, SourceRecord};
use crate::model::formula::Formula;
use crate::model::{FactTableDef, ModelError, SchemaDef};
use crate::storage::{FactRow, Snapshot};
use crate::value::{Fixed, ScalarKind, Value};

/// Which source fields feed which fact columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub fact: String,
    /// Grain dimension name to the source field holding its natural key.
    pub keys: IndexMap<String, String>,
    /// Raw measure name to source field. Raw measures not listed read the
    /// field of the same name. Precomputed measures evaluate their formula
    /// over source fields.
    #[serde(default)]
    pub measures: IndexMap<String, String>,
    pub event_time: String,
}

impl FieldMapping {
    pub fn new(fact: impl Into<String>, event_time: impl Into<String>) -> Self {
        FieldMapping {
            fact: fact.into(),
            keys: IndexMap::new(),
            measures: IndexMap::new(),
            event_time: event_time.into(),
        }
    }

    pub fn key(mut self, dimension: impl Into<String>, field: impl Into<String>) -> Self {
        self.keys.insert(dimension.into(), field.into());
        self
    }

    pub fn measure(mut self, measure: impl Into<String>, field: impl Into<String>) -> Self {
        self.measures.insert(measure.into(), field.into());
        self
    }

    fn fact_def<'s>(&self, schema: &'s SchemaDef) -> Result<&'s FactTableDef, EtlError> {
        schema.fact(&self.fact).ok_or_else(|| EtlError::InvalidMapping(format!("unknown fact table `{}`", self.fact)))
    }

    /// Every source field the mapping reads.
    pub fn source_fields(&self, schema: &SchemaDef) -> Result<Vec<String>, EtlError> {
        let def = self.fact_def(schema)?;
        let mut out: Vec<String> = vec![self.event_time.clone()];
        out.extend(self.keys.values().cloned());
        for m in &def.measures {
            match &m.formula {
                Some(src) => {
                    let f = Formula::parse(src)
                        .map_err(|e| EtlError::InvalidMapping(format!("measure `{}`: {e}", m.name)))?;
                    out.extend(f.fields().into_iter().map(str::to_string));
                }
                None => out.push(self.measures.get(&m.name).cloned().unwrap_or_else(|| m.name.clone())),
            }
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|f| seen.insert(f.clone()));
        Ok(out)
    }

    pub fn validate(&self, schema: &SchemaDef) -> Result<(), EtlError> {
        let def = self.fact_def(schema)?;
        for d in &def.grain {
            if !self.keys.contains_key(d) {
                return Err(EtlError::InvalidMapping(format!("grain dimension `{d}` has no key field")));
            }
        }
        for d in self.keys.keys() {
            if def.grain_index(d).is_none() {
                return Err(EtlError::InvalidMapping(format!("`{d}` is not in the grain of `{}`", def.name)));
            }
        }
        for m in self.measures.keys() {
            match def.measures.iter().find(|x| &x.name == m) {
                None => return Err(EtlError::InvalidMapping(format!("unknown measure `{m}`"))),
                Some(x) if x.formula.is_some() => {
                    return Err(EtlError::InvalidMapping(format!("measure `{m}` is computed from its formula")))
                }
                _ => {}
            }
        }
        self.source_fields(schema).map(|_| ())
    }
}

/// A record that could not become a fact row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub source_id: String,
    pub reason: String,
    pub fields: IndexMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformOutput {
    pub rows: Vec<FactRow>,
    pub dead_letters: Vec<DeadLetter>,
}

enum MeasureSource {
    Field(String),
    Formula(Formula),
}

fn numeric(v: &Value) -> Option<f64> {
    match typed(v, ScalarKind::Decimal)? {
        Value::Decimal(d) => Some(d.to_f64()),
        _ => None,
    }
}

/// Keys each record against the dimension versions in effect at its event
/// time and computes its measures. Records that fail are dead-lettered with
/// the reason; the row's load time is left for storage to stamp.
pub fn transform(
    records: impl IntoIterator<Item = SourceRecord>,
    schema: &SchemaDef,
    dims: &Snapshot,
    mapping: &FieldMapping,
) -> Result<TransformOutput, EtlError> {
    mapping.validate(schema)?;
    let def = mapping.fact_def(schema)?;
    let keys: Vec<(usize, &str)> = def
        .grain
        .iter()
        .map(|d| (schema.dimension_index(d).expect("validated grain"), mapping.keys[d].as_str()))
        .collect();
    let measures: Vec<MeasureSource> = def
        .measures
        .iter()
        .map(|m| match &m.formula {
            Some(src) => MeasureSource::Formula(Formula::parse(src).expect("validated formula")),
            None => MeasureSource::Field(mapping.measures.get(&m.name).cloned().unwrap_or_else(|| m.name.clone())),
        })
        .collect();

    let mut out = TransformOutput::default();
    'records: for rec in records {
        let dead = |reason: String| DeadLetter { source_id: rec.source_id.clone(), reason, fields: rec.fields.clone() };
        let event_time = match typed(rec.get(&mapping.event_time), ScalarKind::Timestamp) {
            Some(Value::Timestamp(t)) => t,
            _ => {
                out.dead_letters.push(dead(format!("bad_event_time: `{}` is not a timestamp", mapping.event_time)));
                continue;
            }
        };
        let mut dim_keys = Vec::with_capacity(keys.len());
        for &(d, field) in &keys {
            let dim = dims.dimension_at(d);
            let kind = dim.def().natural_key_index().map_or(ScalarKind::Text, |i| dim.def().attributes[i].kind);
            let raw = rec.get(field);
            let nk = typed(raw, kind).unwrap_or_else(|| raw.clone());
            match dim.resolve_surrogate(&nk, event_time) {
                Ok(sk) => dim_keys.push(sk),
                Err(e) => {
                    let tag = match e {
                        ModelError::UnknownMember { .. } => "unknown_member",
                        ModelError::NoVersionCovers { .. } => "no_version_covers",
                        _ => "bad_key",
                    };
                    out.dead_letters.push(dead(format!("{tag}: {e}")));
                    continue 'records;
                }
            }
        }
        let mut values = Vec::with_capacity(measures.len());
        for (m, src) in def.measures.iter().zip(&measures) {
            let v = match src {
                MeasureSource::Field(field) => match typed(rec.get(field), ScalarKind::Decimal) {
                    Some(Value::Decimal(x)) => Ok(x),
                    _ => Err(format!("bad_measure: `{}` from field `{field}` is not numeric", m.name)),
                },
                MeasureSource::Formula(f) => f
                    .eval(&|name| numeric(rec.get(name)))
                    .map_err(|e| format!("formula: measure `{}`: {e}", m.name))
                    .and_then(|x| {
                        Fixed::from_f64(x).ok_or_else(|| format!("formula: measure `{}` out of range", m.name))
                    }),
            };
            match v {
                Ok(x) => values.push(x),
                Err(reason) => {
                    out.dead_letters.push(dead(reason));
                    continue 'records;
                }
            }
        }
        out.rows.push(FactRow::new(dim_keys, values, event_time));
    }
    Ok(out)
}

/// Writes one JSON object per dead letter.
pub fn write_dead_letters(mut out: impl Write, letters: &[DeadLetter]) -> std::io::Result<()> {
    for l in letters {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
