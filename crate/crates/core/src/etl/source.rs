use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use indexmap::IndexMap;

use super::{EtlError, SourceRecord};
use crate::clock::Clock;
use crate::value::{Fixed, Value};

/// What a source yields before stamping.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceItem {
    Record(IndexMap<String, Value>),
    /// Input that could not be framed into fields.
    Malformed {
        raw: String,
        reason: String,
    },
}

/// A record producer. Items come out in source order.
pub trait Source: Send {
    fn id(&self) -> &str;
    fn next_item(&mut self) -> Option<SourceItem>;
}

/// Streams `source`, stamping each record with the clock's current time.
pub fn extract<'a>(source: &'a mut dyn Source, clock: &'a dyn Clock) -> impl Iterator<Item = SourceRecord> + 'a {
    std::iter::from_fn(move || {
        let item = source.next_item()?;
        let extracted_at = clock.now();
        let source_id = source.id().to_string();
        Some(match item {
            SourceItem::Record(fields) => SourceRecord { source_id, fields, extracted_at, framing_error: None },
            SourceItem::Malformed { raw, reason } => {
                let mut fields = IndexMap::new();
                fields.insert("_raw".to_string(), Value::text(raw));
                SourceRecord { source_id, fields, extracted_at, framing_error: Some(reason) }
            }
        })
    })
}

fn cell(raw: &str) -> Value {
    if raw.is_empty() {
        Value::Null
    } else {
        Value::text(raw)
    }
}

/// Delimited text with a header row. Rows whose field count differs from
/// the header, or that are not valid UTF-8, are yielded as malformed.
pub struct DelimitedSource {
    id: String,
    headers: Vec<String>,
    records: csv::StringRecordsIntoIter<Box<dyn Read + Send>>,
    done: bool,
}

impl DelimitedSource {
    pub fn open(path: impl AsRef<Path>, delimiter: u8) -> Result<Self, EtlError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| EtlError::SourceUnreadable { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_reader(path.display().to_string(), Box::new(file), delimiter)
    }

    pub fn from_reader(id: impl Into<String>, reader: Box<dyn Read + Send>, delimiter: u8) -> Result<Self, EtlError> {
        let id = id.into();
        let mut rdr =
            csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| EtlError::SourceUnreadable { path: id.clone(), reason: e.to_string() })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        Ok(DelimitedSource { id, headers, records: rdr.into_records(), done: false })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }
}

impl Source for DelimitedSource {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_item(&mut self) -> Option<SourceItem> {
        if self.done {
            return None;
        }
        match self.records.next()? {
            Ok(rec) if rec.len() == self.headers.len() => {
                Some(SourceItem::Record(self.headers.iter().cloned().zip(rec.iter().map(cell)).collect()))
            }
            Ok(rec) => Some(SourceItem::Malformed {
                raw: rec.iter().collect::<Vec<_>>().join(","),
                reason: format!("expected {} fields, found {}", self.headers.len(), rec.len()),
            }),
            Err(e) => {
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    self.done = true;
                }
                Some(SourceItem::Malformed { raw: String::new(), reason: e.to_string() })
            }
        }
    }
}

/// One JSON object per line. Blank lines are skipped; anything else that
/// is not an object is malformed.
pub struct JsonLinesSource {
    id: String,
    lines: Box<dyn BufRead + Send>,
}

impl JsonLinesSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EtlError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| EtlError::SourceUnreadable { path: path.display().to_string(), reason: e.to_string() })?;
        Ok(Self::from_reader(path.display().to_string(), Box::new(BufReader::new(file))))
    }

    pub fn from_reader(id: impl Into<String>, lines: Box<dyn BufRead + Send>) -> Self {
        JsonLinesSource { id: id.into(), lines }
    }
}

fn json_value(v: serde_json::Value) -> Value {
    match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::text(b.to_string()),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Integer(i),
            None => {
                n.as_f64().and_then(Fixed::from_f64).map(Value::Decimal).unwrap_or_else(|| Value::text(n.to_string()))
            }
        },
        serde_json::Value::String(s) => Value::text(s),
        other => Value::text(other.to_string()),
    }
}

impl Source for JsonLinesSource {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_item(&mut self) -> Option<SourceItem> {
        loop {
            let mut buf = Vec::new();
            match self.lines.read_until(b'\n', &mut buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(SourceItem::Malformed { raw: String::new(), reason: e.to_string() }),
            }
            let Ok(line) = String::from_utf8(buf) else {
                return Some(SourceItem::Malformed { raw: String::new(), reason: "invalid UTF-8".into() });
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            return Some(match serde_json::from_str::<serde_json::Value>(line) {
                Ok(serde_json::Value::Object(map)) => {
                    SourceItem::Record(map.into_iter().map(|(k, v)| (k, json_value(v))).collect())
                }
                Ok(_) => SourceItem::Malformed { raw: line.to_string(), reason: "not a JSON object".into() },
                Err(e) => SourceItem::Malformed { raw: line.to_string(), reason: e.to_string() },
            });
        }
    }
}

/// In-process items, e.g. from a synthetic generator.
#[derive(Debug, Default)]
pub struct MemorySource {
    id: String,
    items: VecDeque<SourceItem>,
}

impl MemorySource {
    pub fn new(id: impl Into<String>, items: impl IntoIterator<Item = SourceItem>) -> Self {
        MemorySource { id: id.into(), items: items.into_iter().collect() }
    }

    pub fn from_records(id: impl Into<String>, records: impl IntoIterator<Item = IndexMap<String, Value>>) -> Self {
        Self::new(id, records.into_iter().map(SourceItem::Record))
    }

    pub fn push(&mut self, item: SourceItem) {
        self.items.push_back(item);
    }
}

impl Source for MemorySource {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_item(&mut self) -> Option<SourceItem> {
        self.items.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;

    fn delimited(text: &'static str) -> Vec<SourceRecord> {
        let mut src = DelimitedSource::from_reader("t", Box::new(text.as_bytes()), b',').unwrap();
        let clock = SimClock::new(7);
        extract(&mut src, &clock).collect()
    }

    #[test]
    fn delimited_lines() {
        let recs = delimited("a,b\n1,x\n2,y\n3,z\n");
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].get("b"), &Value::text("y"));
        assert_eq!(recs[0].extracted_at, 7);
        assert!(delimited("").is_empty());
    }

    #[test]
    fn garbled_line_is_marked() {
        let recs = delimited("a,b\n1,x\n2\n3,z\n4,w\n");
        assert_eq!(recs.len(), 4);
        assert_eq!(recs.iter().filter(|r| r.framing_error.is_some()).count(), 1);
        assert!(recs[1].framing_error.is_some());
    }

    #[test]
    fn json_lines() {
        let text = "{\"a\": 1, \"b\": 2.5}\n\n[1]\n{\"a\": null}\n";
        let mut src = JsonLinesSource::from_reader("j", Box::new(text.as_bytes()));
        let clock = SimClock::new(0);
        let recs: Vec<_> = extract(&mut src, &clock).collect();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].get("a"), &Value::Integer(1));
        assert_eq!(recs[0].get("b"), &Value::Decimal(Fixed::from_units(25_000)));
        assert!(recs[1].framing_error.is_some());
        assert!(recs[2].get("a").is_null());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(DelimitedSource::open("/nonexistent/x.csv", b','), Err(EtlError::SourceUnreadable { .. })));
    }
}
