//! Dimension members with Type-1 (overwrite) and Type-2 (versioned)
//! slowly-changing-dimension handling.
//!
//! Versioned members carry half-open validity intervals `[valid_from,
//! valid_to)`; the open end is `None`. A key's intervals always partition
//! `[first valid_from, +inf)`, and a lookup at an update instant resolves to
//! the newer version.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schema::{DimensionDef, ScdPolicy};
use super::ModelError;
use crate::value::{Timestamp, Value};

/// Engine-assigned dimension row identifier. Keys start at 1 and are dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SurrogateKey(pub u64);

impl fmt::Display for SurrogateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionMember {
    pub surrogate_key: SurrogateKey,
    pub natural_key: Value,
    /// Aligned with the dimension's declared attributes.
    pub attributes: Vec<Value>,
    pub valid_from: Timestamp,
    pub valid_to: Option<Timestamp>,
    pub is_current: bool,
}

impl DimensionMember {
    pub fn covers(&self, t: Timestamp) -> bool {
        self.valid_from <= t && self.valid_to.is_none_or(|to| t < to)
    }
}

#[derive(Debug, Clone)]
pub struct DimensionState {
    def: Arc<DimensionDef>,
    rows: Vec<DimensionMember>,
    // natural key -> row indices in version order
    by_key: HashMap<Value, Vec<usize>>,
}

impl DimensionState {
    pub fn new(def: Arc<DimensionDef>) -> Self {
        DimensionState { def, rows: Vec::new(), by_key: HashMap::new() }
    }

    pub fn def(&self) -> &DimensionDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[DimensionMember] {
        &self.rows
    }

    pub fn member(&self, key: SurrogateKey) -> Option<&DimensionMember> {
        (key.0 as usize).checked_sub(1).and_then(|i| self.rows.get(i))
    }

    pub fn contains(&self, natural_key: &Value) -> bool {
        self.by_key.contains_key(natural_key)
    }

    /// All versions of a member, oldest first.
    pub fn versions(&self, natural_key: &Value) -> Vec<&DimensionMember> {
        self.by_key.get(natural_key).map(|ix| ix.iter().map(|&i| &self.rows[i]).collect()).unwrap_or_default()
    }

    pub fn natural_keys(&self) -> impl Iterator<Item = &Value> {
        self.by_key.keys()
    }

    /// Normalizes a natural key literal to the natural-key attribute's kind.
    pub fn normalize_key(&self, natural_key: &Value) -> Result<Value, ModelError> {
        if natural_key.is_null() {
            return Err(ModelError::NullNaturalKey { dimension: self.def.name.clone() });
        }
        let idx = self.def.natural_key_index().ok_or_else(|| ModelError::UnknownAttribute {
            dimension: self.def.name.clone(),
            attribute: self.def.natural_key.clone(),
        })?;
        let kind = self.def.attributes[idx].kind;
        natural_key.coerce(kind).ok_or_else(|| ModelError::KindMismatch {
            dimension: self.def.name.clone(),
            attribute: self.def.natural_key.clone(),
            expected: kind,
        })
    }

    fn merged_attributes(
        &self,
        base: Option<&[Value]>,
        natural_key: &Value,
        updates: &[(String, Value)],
    ) -> Result<Vec<Value>, ModelError> {
        let mut attrs = base.map(<[Value]>::to_vec).unwrap_or_else(|| vec![Value::Null; self.def.attributes.len()]);
        for (name, value) in updates {
            let idx = self.def.attribute_index(name).ok_or_else(|| ModelError::UnknownAttribute {
                dimension: self.def.name.clone(),
                attribute: name.clone(),
            })?;
            let kind = self.def.attributes[idx].kind;
            attrs[idx] = value.coerce(kind).ok_or_else(|| ModelError::KindMismatch {
                dimension: self.def.name.clone(),
                attribute: name.clone(),
                expected: kind,
            })?;
        }
        if let Some(nk) = self.def.natural_key_index() {
            attrs[nk] = natural_key.clone();
        }
        Ok(attrs)
    }

    /// Applies a change to one member and returns the surrogate key that is
    /// current afterwards.
    ///
    /// Overwrite replaces attributes in place. Versioned closes the current
    /// row at `at` and opens a new one. Unknown keys are inserted under
    /// either policy.
    pub fn apply_scd_update(
        &mut self,
        natural_key: &Value,
        new_attributes: &[(String, Value)],
        at: Timestamp,
    ) -> Result<SurrogateKey, ModelError> {
        let key = self.normalize_key(natural_key)?;
        let current = self.by_key.get(&key).and_then(|ix| ix.last().copied());
        match (current, self.def.scd_policy) {
            (None, _) => {
                let attrs = self.merged_attributes(None, &key, new_attributes)?;
                Ok(self.push_row(key, attrs, at))
            }
            (Some(i), ScdPolicy::Overwrite) => {
                let attrs = self.merged_attributes(Some(&self.rows[i].attributes), &key, new_attributes)?;
                self.rows[i].attributes = attrs;
                Ok(self.rows[i].surrogate_key)
            }
            (Some(i), ScdPolicy::Versioned) => {
                let valid_from = self.rows[i].valid_from;
                if at < valid_from {
                    return Err(ModelError::TimestampRegression {
                        dimension: self.def.name.clone(),
                        key: key.to_string(),
                        at,
                        valid_from,
                    });
                }
                let attrs = self.merged_attributes(Some(&self.rows[i].attributes), &key, new_attributes)?;
                let row = &mut self.rows[i];
                row.valid_to = Some(at);
                row.is_current = false;
                Ok(self.push_row(key, attrs, at))
            }
        }
    }

    fn push_row(&mut self, key: Value, attributes: Vec<Value>, at: Timestamp) -> SurrogateKey {
        let sk = SurrogateKey(self.rows.len() as u64 + 1);
        self.by_key.entry(key.clone()).or_default().push(self.rows.len());
        self.rows.push(DimensionMember {
            surrogate_key: sk,
            natural_key: key,
            attributes,
            valid_from: at,
            valid_to: None,
            is_current: true,
        });
        sk
    }

    /// Surrogate key in effect for `natural_key` at `as_of`.
    pub fn resolve_surrogate(&self, natural_key: &Value, as_of: Timestamp) -> Result<SurrogateKey, ModelError> {
        let key = self.normalize_key(natural_key)?;
        let ix = self
            .by_key
            .get(&key)
            .ok_or_else(|| ModelError::UnknownMember { dimension: self.def.name.clone(), key: key.to_string() })?;
        if self.def.scd_policy == ScdPolicy::Overwrite {
            return Ok(self.rows[ix[0]].surrogate_key);
        }
        // last version starting at or before as_of; ties go to the newer one
        let n = ix.partition_point(|&i| self.rows[i].valid_from <= as_of);
        if n == 0 {
            return Err(ModelError::NoVersionCovers { dimension: self.def.name.clone(), key: key.to_string(), as_of });
        }
        Ok(self.rows[ix[n - 1]].surrogate_key)
    }
}
