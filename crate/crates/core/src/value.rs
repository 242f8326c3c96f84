//! Scalar values shared by dimensions, source records and query results.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Engine time in ticks. The simulated clock advances one tick per step;
/// the wall clock reports seconds since the Unix epoch.
pub type Timestamp = i64;

/// Ticks in one day when ticks are seconds.
pub const TICKS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Integer,
    Decimal,
    Text,
    Timestamp,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::Integer => "integer",
            ScalarKind::Decimal => "decimal",
            ScalarKind::Text => "text",
            ScalarKind::Timestamp => "timestamp",
        })
    }
}

/// Fixed-point decimal with four fractional digits.
///
/// Measures are stored in this form so that sums are exact and independent
/// of the order in which partial aggregates are merged.
///
/// Serialized as a decimal string (`"12.5"`); integers and floats are also
/// accepted when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

impl Serialize for Fixed {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(i) => Fixed::checked_from_int(i).ok_or_else(|| serde::de::Error::custom("decimal out of range")),
            Repr::Float(f) => Fixed::from_f64(f).ok_or_else(|| serde::de::Error::custom("decimal out of range")),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a decimal number: {0:?}")]
pub struct ParseFixedError(pub String);

impl Fixed {
    pub const SCALE: i64 = 10_000;
    pub const ZERO: Fixed = Fixed(0);

    pub const fn from_units(units: i64) -> Self {
        Fixed(units)
    }

    pub const fn from_int(v: i64) -> Self {
        Fixed(v * Self::SCALE)
    }

    pub fn checked_from_int(v: i64) -> Option<Self> {
        v.checked_mul(Self::SCALE).map(Fixed)
    }

    /// Rounds half away from zero to the nearest representable value.
    /// Returns `None` for non-finite or out-of-range input.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        let scaled = (v * Self::SCALE as f64).round();
        if scaled.abs() >= i64::MAX as f64 {
            return None;
        }
        Some(Fixed(scaled as i64))
    }

    pub const fn units(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl FromStr for Fixed {
    type Err = ParseFixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseFixedError(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err())? };
        let mut frac: i64 = 0;
        let mut digits = 0;
        let mut round_up = false;
        for (i, b) in frac_part.bytes().enumerate() {
            let d = (b - b'0') as i64;
            if i < 4 {
                frac = frac * 10 + d;
                digits += 1;
            } else if i == 4 {
                round_up = d >= 5;
            }
        }
        while digits < 4 {
            frac *= 10;
            digits += 1;
        }
        let mut units = int.checked_mul(Self::SCALE).and_then(|v| v.checked_add(frac)).ok_or_else(err)?;
        if round_up {
            units = units.checked_add(1).ok_or_else(err)?;
        }
        Ok(Fixed(if neg { -units } else { units }))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / Self::SCALE as u64;
        let frac = abs % Self::SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let s = format!("{frac:04}");
            write!(f, "{sign}{int}.{}", s.trim_end_matches('0'))
        }
    }
}

/// A dimension attribute or filter literal.
///
/// Decimals are fixed-point so every value is hashable and totally ordered,
/// which lets attribute values serve directly as group keys.
///
/// Serialized as JSON-like scalars: null, integers and strings map directly;
/// decimals and timestamps are tagged (`{"decimal": "1.5"}`,
/// `{"timestamp": 9}`) so they survive a round trip.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Integer(i64),
    Decimal(Fixed),
    Text(Arc<str>),
    Timestamp(i64),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaggedValue {
    Decimal(Fixed),
    Timestamp(i64),
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_none(),
            Value::Integer(i) => s.serialize_i64(*i),
            Value::Text(t) => s.serialize_str(t),
            Value::Decimal(d) => TaggedValue::Decimal(*d).serialize(s),
            Value::Timestamp(t) => TaggedValue::Timestamp(*t).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Tagged(TaggedValue),
            Int(i64),
            Float(f64),
            Text(String),
        }
        Ok(match Option::<Repr>::deserialize(d)? {
            None => Value::Null,
            Some(Repr::Tagged(TaggedValue::Decimal(x))) => Value::Decimal(x),
            Some(Repr::Tagged(TaggedValue::Timestamp(t))) => Value::Timestamp(t),
            Some(Repr::Int(i)) => Value::Integer(i),
            Some(Repr::Float(f)) => {
                Value::Decimal(Fixed::from_f64(f).ok_or_else(|| serde::de::Error::custom("decimal out of range"))?)
            }
            Some(Repr::Text(t)) => Value::text(t),
        })
    }
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Self {
        Value::Text(Arc::from(s.as_ref()))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Parses raw text as the given kind.
    pub fn parse_as(raw: &str, kind: ScalarKind) -> Option<Value> {
        let t = raw.trim();
        match kind {
            ScalarKind::Integer => t.parse().ok().map(Value::Integer),
            ScalarKind::Decimal => t.parse().ok().map(Value::Decimal),
            ScalarKind::Timestamp => t.parse().ok().map(Value::Timestamp),
            ScalarKind::Text => Some(Value::text(raw)),
        }
    }

    pub fn conforms_to(&self, kind: ScalarKind) -> bool {
        matches!(
            (self, kind),
            (Value::Null, _)
                | (Value::Integer(_), ScalarKind::Integer)
                | (Value::Decimal(_), ScalarKind::Decimal)
                | (Value::Text(_), ScalarKind::Text)
                | (Value::Timestamp(_), ScalarKind::Timestamp)
        )
    }

    /// Coerces a literal to the given kind where that is lossless
    /// (integer literals become decimals or timestamps).
    pub fn coerce(&self, kind: ScalarKind) -> Option<Value> {
        match (self, kind) {
            (v, k) if v.conforms_to(k) => Some(v.clone()),
            (Value::Integer(i), ScalarKind::Decimal) => Some(Value::Decimal(Fixed::from_int(*i))),
            (Value::Integer(i), ScalarKind::Timestamp) => Some(Value::Timestamp(*i)),
            (Value::Timestamp(t), ScalarKind::Integer) => Some(Value::Integer(*t)),
            _ => None,
        }
    }

    /// Numeric view in fixed-point units, used for cross-kind comparison.
    fn numeric_units(&self) -> Option<i128> {
        match self {
            Value::Integer(i) | Value::Timestamp(i) => Some(*i as i128 * Fixed::SCALE as i128),
            Value::Decimal(d) => Some(d.units() as i128),
            _ => None,
        }
    }

    /// SQL-style comparison: `None` when either side is null or the kinds
    /// cannot be compared.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (a, b) => Some(a.numeric_units()?.cmp(&b.numeric_units()?)),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Decimal(_) | Value::Timestamp(_) => 1,
            Value::Text(_) => 2,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order used for deterministic result ordering: nulls first, then
/// numbers, then text.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank()).then_with(|| self.compare(other).unwrap_or(Ordering::Equal)).then_with(|| {
            // numerically equal values of different kinds
            let tag = |v: &Value| match v {
                Value::Integer(_) => 0,
                Value::Decimal(_) => 1,
                Value::Timestamp(_) => 2,
                _ => 3,
            };
            tag(self).cmp(&tag(other))
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::Text(s) => f.write_str(s),
            Value::Timestamp(t) => write!(f, "@{t}"),
        }
    }
}
