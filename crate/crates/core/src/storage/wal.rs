//! Write-ahead log of committed mutations.
//!
//! The file is a sequence of records, each framed as a little-endian `u32`
//! payload length followed by the payload:
//!
//! ```text
//! u64  epoch            epoch produced by the mutation
//! u8   op code          1 batch, 2 trickle, 3 flip, 4 consolidate,
//!                       5 retention, 6 cache insert, 7 cache drain,
//!                       8 cache migrate, 9 dimension upsert
//! u16  target length    followed by the UTF-8 fact or dimension name
//! i64  argument         older_than / now / upto / at, 0 when unused
//! u32  row count
//! rows
//! ```
//!
//! A fact row is `u64` per grain key, `i64` fixed-point units per measure,
//! then `i64` event time and `i64` load time. A dimension record holds one
//! row per changed member, all applied at `argument`; each row is the
//! natural key followed by one tagged slot per declared attribute
//! (`0` absent, `1` null, `2` value). Integers, decimals and timestamps
//! are `i64`; text is a `u32` byte length plus UTF-8. A truncated final
//! record (torn write) ends replay without error.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use super::row::FactRow;
use super::Epoch;
use crate::model::{DimensionDef, SchemaDef, SurrogateKey};
use crate::value::{Fixed, ScalarKind, Timestamp, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum OpCode {
    Batch = 1,
    Trickle = 2,
    Flip = 3,
    Consolidate = 4,
    Retention = 5,
    CacheInsert = 6,
    CacheDrain = 7,
    CacheMigrate = 8,
    DimensionUpsert = 9,
}

impl OpCode {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => OpCode::Batch,
            2 => OpCode::Trickle,
            3 => OpCode::Flip,
            4 => OpCode::Consolidate,
            5 => OpCode::Retention,
            6 => OpCode::CacheInsert,
            7 => OpCode::CacheDrain,
            8 => OpCode::CacheMigrate,
            9 => OpCode::DimensionUpsert,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Facts(Vec<FactRow>),
    Members(Vec<MemberChange>),
}

/// One dimension member change inside an upsert record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberChange {
    pub natural_key: Value,
    pub attributes: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub epoch: Epoch,
    pub op: OpCode,
    pub target: String,
    pub arg: i64,
    pub payload: Payload,
}

#[derive(Debug, thiserror::Error)]
pub enum WalError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log record at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

fn put_value(out: &mut Vec<u8>, v: &Value, kind: ScalarKind) {
    match (kind, v) {
        (ScalarKind::Text, Value::Text(s)) => {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        (_, Value::Integer(i) | Value::Timestamp(i)) => out.extend_from_slice(&i.to_le_bytes()),
        (_, Value::Decimal(d)) => out.extend_from_slice(&d.units().to_le_bytes()),
        // callers only pass values already coerced to `kind`
        _ => unreachable!("value {v:?} does not match kind {kind}"),
    }
}

impl WalRecord {
    pub fn encode(&self, schema: &SchemaDef) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.epoch.0.to_le_bytes());
        out.push(self.op as u8);
        out.extend_from_slice(&(self.target.len() as u16).to_le_bytes());
        out.extend_from_slice(self.target.as_bytes());
        out.extend_from_slice(&self.arg.to_le_bytes());
        match &self.payload {
            Payload::Facts(rows) => {
                out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
                for r in rows {
                    for k in &r.dim_keys {
                        out.extend_from_slice(&k.0.to_le_bytes());
                    }
                    for m in &r.measures {
                        out.extend_from_slice(&m.units().to_le_bytes());
                    }
                    out.extend_from_slice(&r.event_time.to_le_bytes());
                    out.extend_from_slice(&r.load_time.to_le_bytes());
                }
            }
            Payload::Members(changes) => {
                let def = schema.dimension(&self.target).expect("logged dimension exists");
                let nk_kind = def.attributes[def.natural_key_index().expect("valid schema")].kind;
                out.extend_from_slice(&(changes.len() as u32).to_le_bytes());
                for ch in changes {
                    put_value(&mut out, &ch.natural_key.coerce(nk_kind).expect("key validated"), nk_kind);
                    for a in &def.attributes {
                        match ch.attributes.iter().rev().find(|(n, _)| n == &a.name) {
                            None => out.push(0),
                            Some((_, Value::Null)) => out.push(1),
                            Some((_, v)) => {
                                out.push(2);
                                put_value(&mut out, &v.coerce(a.kind).expect("attributes validated"), a.kind);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8], schema: &SchemaDef) -> Result<WalRecord, String> {
        let mut c = Cursor { buf, pos: 0 };
        let epoch = Epoch(c.u64()?);
        let op = OpCode::from_u8(c.u8()?).ok_or("unknown op code")?;
        let tlen = c.u16()? as usize;
        let target = String::from_utf8(c.take(tlen)?.to_vec()).map_err(|_| "target not utf-8")?;
        let arg = c.i64()?;
        let count = c.u32()? as usize;
        let payload = if op == OpCode::DimensionUpsert {
            let def = schema.dimension(&target).ok_or_else(|| format!("unknown dimension {target:?}"))?;
            let changes = (0..count).map(|_| decode_member(&mut c, def)).collect::<Result<_, _>>()?;
            Payload::Members(changes)
        } else {
            let fact = schema.fact(&target).ok_or_else(|| format!("unknown fact table {target:?}"))?;
            let mut rows = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let dim_keys = (0..fact.grain.len()).map(|_| c.u64().map(SurrogateKey)).collect::<Result<_, _>>()?;
                let measures =
                    (0..fact.measures.len()).map(|_| c.i64().map(Fixed::from_units)).collect::<Result<_, _>>()?;
                let event_time = c.i64()?;
                let load_time = c.i64()?;
                rows.push(FactRow { dim_keys, measures, event_time, load_time });
            }
            Payload::Facts(rows)
        };
        if c.pos != buf.len() {
            return Err("trailing bytes in record".into());
        }
        Ok(WalRecord { epoch, op, target, arg, payload })
    }
}

fn decode_member(c: &mut Cursor<'_>, def: &DimensionDef) -> Result<MemberChange, String> {
    let nk_kind = def.attributes[def.natural_key_index().ok_or("natural key missing")?].kind;
    let natural_key = c.value(nk_kind)?;
    let mut attributes = Vec::new();
    for a in &def.attributes {
        match c.u8()? {
            0 => {}
            1 => attributes.push((a.name.clone(), Value::Null)),
            2 => attributes.push((a.name.clone(), c.value(a.kind)?)),
            t => return Err(format!("bad attribute tag {t}")),
        }
    }
    Ok(MemberChange { natural_key, attributes })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("record too short")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, String> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, String> {
        self.array().map(u64::from_le_bytes)
    }

    fn i64(&mut self) -> Result<i64, String> {
        self.array().map(i64::from_le_bytes)
    }

    fn value(&mut self, kind: ScalarKind) -> Result<Value, String> {
        Ok(match kind {
            ScalarKind::Integer => Value::Integer(self.i64()?),
            ScalarKind::Timestamp => Value::Timestamp(self.i64()?),
            ScalarKind::Decimal => Value::Decimal(Fixed::from_units(self.i64()?)),
            ScalarKind::Text => {
                let n = self.u32()? as usize;
                let s = std::str::from_utf8(self.take(n)?).map_err(|_| "text not utf-8")?;
                Value::text(s)
            }
        })
    }
}

pub(crate) struct WalWriter {
    out: BufWriter<File>,
    sync: bool,
}

impl WalWriter {
    pub(crate) fn open(path: &Path, sync: bool) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(WalWriter { out: BufWriter::new(file), sync })
    }

    pub(crate) fn append(&mut self, record: &WalRecord, schema: &SchemaDef) -> io::Result<()> {
        let payload = record.encode(schema);
        self.out.write_all(&(payload.len() as u32).to_le_bytes())?;
        self.out.write_all(&payload)?;
        self.out.flush()?;
        if self.sync {
            self.out.get_ref().sync_data()?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct WalContents {
    pub records: Vec<WalRecord>,
    /// Bytes of an incomplete final record that were ignored.
    pub torn_tail: usize,
    /// Length of the well-formed prefix.
    pub valid_len: u64,
}

/// Reads every complete record of a log file.
pub fn read_log(path: impl AsRef<Path>, schema: &SchemaDef) -> Result<WalContents, WalError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut out = WalContents::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            out.torn_tail = bytes.len() - pos;
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if bytes.len() - pos - 4 < len {
            out.torn_tail = bytes.len() - pos;
            break;
        }
        let rec = WalRecord::decode(&bytes[pos + 4..pos + 4 + len], schema)
            .map_err(|reason| WalError::Corrupt { offset: pos as u64, reason })?;
        out.records.push(rec);
        pos += 4 + len;
    }
    out.valid_len = pos as u64;
    Ok(out)
}

pub(crate) fn fact_record(epoch: Epoch, op: OpCode, fact: &str, arg: Timestamp, rows: Vec<FactRow>) -> WalRecord {
    WalRecord { epoch, op, target: fact.to_string(), arg, payload: Payload::Facts(rows) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn schema() -> SchemaDef {
        SchemaDef {
            query_priorities: vec![],
            dimensions: vec![DimensionDef {
                name: "sym".into(),
                attributes: vec![
                    AttributeDef::new("ticker", ScalarKind::Text),
                    AttributeDef::new("lot", ScalarKind::Integer),
                    AttributeDef::new("tick", ScalarKind::Decimal),
                ],
                natural_key: "ticker".into(),
                scd_policy: ScdPolicy::Versioned,
                conformed: false,
            }],
            fact_tables: vec![FactTableDef {
                name: "trades".into(),
                grain: vec!["sym".into()],
                measures: vec![MeasureDef::raw("px", Aggregator::Sum), MeasureDef::raw("qty", Aggregator::Sum)],
                duration_days: 1,
            }],
        }
    }

    #[test]
    fn fact_record_layout_is_little_endian() {
        let s = schema();
        let row = FactRow {
            dim_keys: vec![SurrogateKey(3)],
            measures: vec![Fixed::from_units(-2), Fixed::from_units(5)],
            event_time: 7,
            load_time: 9,
        };
        let rec = fact_record(Epoch(258), OpCode::Trickle, "trades", 0, vec![row]);
        let bytes = rec.encode(&s);
        let mut expect = Vec::new();
        expect.extend_from_slice(&[2, 1, 0, 0, 0, 0, 0, 0]);
        expect.push(2);
        expect.extend_from_slice(&[6, 0]);
        expect.extend_from_slice(b"trades");
        expect.extend_from_slice(&[0; 8]);
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.extend_from_slice(&3u64.to_le_bytes());
        expect.extend_from_slice(&(-2i64).to_le_bytes());
        expect.extend_from_slice(&5i64.to_le_bytes());
        expect.extend_from_slice(&7i64.to_le_bytes());
        expect.extend_from_slice(&9i64.to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(WalRecord::decode(&bytes, &s).unwrap(), rec);
    }

    #[test]
    fn member_record_roundtrip() {
        let s = schema();
        let rec = WalRecord {
            epoch: Epoch(1),
            op: OpCode::DimensionUpsert,
            target: "sym".into(),
            arg: 44,
            payload: Payload::Members(vec![
                MemberChange {
                    natural_key: Value::text("ACME"),
                    attributes: vec![
                        ("lot".into(), Value::Null),
                        ("tick".into(), Value::Decimal(Fixed::from_units(25))),
                    ],
                },
                MemberChange { natural_key: Value::text("INIT"), attributes: vec![] },
            ]),
        };
        let bytes = rec.encode(&s);
        assert_eq!(WalRecord::decode(&bytes, &s).unwrap(), rec);
        assert!(WalRecord::decode(&bytes[..bytes.len() - 1], &s).is_err());
    }

    #[test]
    fn torn_tail_is_ignored() {
        let s = schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal");
        let mut w = WalWriter::open(&path, false).unwrap();
        let rec = fact_record(Epoch(1), OpCode::Flip, "trades", 0, vec![]);
        w.append(&rec, &s).unwrap();
        w.append(&rec, &s).unwrap();
        drop(w);
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        let c = read_log(&path, &s).unwrap();
        assert_eq!(c.records.len(), 1);
        assert!(c.torn_tail > 0);
    }
}
