//! Text form of a query.
//!
//! ```text
//! query     := aggregate ("," aggregate)* [FROM fact] [BY field ("," field)*]
//!              [WHERE pred ("," pred)*] [FRESHNESS level]
//! aggregate := (SUM | COUNT | MIN | MAX | AVG) "(" measure | "*" ")"
//! field     := event_time | dimension "." attribute | attribute
//! pred      := field ("=" | "<" | "<=" | ">" | ">=") literal
//!            | field BETWEEN literal AND literal
//!            | field IN "(" literal ("," literal)* ")"
//! literal   := integer | decimal | "@" integer | 'text' | "text" | null
//! level     := historical | near_real_time | real_time
//! ```
//!
//! Keywords are case-insensitive. `WHERE` predicates are conjunctive. A bare
//! attribute name is accepted when exactly one dimension of the fact's grain
//! declares it. Without `FROM` the schema must have exactly one fact table;
//! without `FRESHNESS` the level is `real_time`.

use super::{AggregateSpec, Field, Filter, Freshness, Predicate, QueryError, QuerySpec};
use crate::model::{Aggregator, FactTableDef, SchemaDef};
use crate::value::{Fixed, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Dec(Fixed),
    Time(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Op(&'static str),
    Star,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let err = |pos: usize, msg: &str| QueryError::Parse { pos, msg: msg.to_string() };
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((i, Tok::LParen)),
            b')' => out.push((i, Tok::RParen)),
            b',' => out.push((i, Tok::Comma)),
            b'*' => out.push((i, Tok::Star)),
            b'=' => out.push((i, Tok::Op("="))),
            b'<' | b'>' => {
                let eq = b.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', true) => "<=",
                    (b'<', false) => "<",
                    (_, true) => ">=",
                    _ => ">",
                };
                if eq {
                    i += 1;
                }
                out.push((start, Tok::Op(op)));
            }
            b'\'' | b'"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    let rest = &src[i..];
                    let Some(ch) = rest.chars().next() else {
                        return Err(err(start, "unterminated string"));
                    };
                    if ch as u32 == quote as u32 {
                        // doubled quote is an escaped quote
                        if b.get(i + 1) == Some(&quote) {
                            s.push(ch);
                            i += 2;
                            continue;
                        }
                        break;
                    }
                    s.push(ch);
                    i += ch.len_utf8();
                }
                out.push((start, Tok::Str(s)));
            }
            b'@' | b'-' | b'0'..=b'9' => {
                let stamp = c == b'@';
                if stamp {
                    i += 1;
                }
                let num_start = i;
                if b.get(i) == Some(&b'-') {
                    i += 1;
                }
                while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                    i += 1;
                }
                let text = &src[num_start..i];
                let tok = if stamp {
                    Tok::Time(text.parse().map_err(|_| err(start, "bad timestamp literal"))?)
                } else if text.contains('.') {
                    Tok::Dec(text.parse().map_err(|_| err(start, "bad decimal literal"))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| err(start, "bad integer literal"))?)
                };
                out.push((start, tok));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
                continue;
            }
            _ => return Err(err(i, &format!("unexpected character {:?}", src[i..].chars().next().unwrap_or(' ')))),
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    schema: &'a SchemaDef,
}

impl<'a> Parser<'a> {
    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Parse { pos: self.at(), msg: msg.into() })
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), QueryError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                self.fail(format!("expected {what}"))
            }
        }
    }

    fn aggregate(&mut self) -> Result<AggregateSpec, QueryError> {
        let name = self.ident("aggregate function")?;
        let Some(aggregator) = Aggregator::parse(&name) else {
            self.pos -= 1;
            return self.fail(format!("unknown aggregate `{name}`"));
        };
        self.expect(Tok::LParen, "`(`")?;
        let measure = match self.next() {
            Some(Tok::Star) => "*".to_string(),
            Some(Tok::Ident(m)) => m,
            _ => {
                self.pos -= 1;
                return self.fail("expected measure name or `*`");
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(AggregateSpec { measure, aggregator })
    }

    fn literal(&mut self) -> Result<Value, QueryError> {
        match self.next() {
            Some(Tok::Int(i)) => Ok(Value::Integer(i)),
            Some(Tok::Dec(d)) => Ok(Value::Decimal(d)),
            Some(Tok::Time(t)) => Ok(Value::Timestamp(t)),
            Some(Tok::Str(s)) => Ok(Value::text(s)),
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("null") => Ok(Value::Null),
            _ => {
                self.pos -= 1;
                self.fail("expected literal")
            }
        }
    }

    fn field(&mut self, fact: Option<&FactTableDef>) -> Result<Field, QueryError> {
        let pos = self.at();
        let name = self.ident("field")?;
        if name.eq_ignore_ascii_case("event_time") {
            return Ok(Field::EventTime);
        }
        if let Some((d, a)) = name.split_once('.') {
            return Ok(Field::attr(d, a));
        }
        let Some(fact) = fact else {
            return Err(QueryError::Parse { pos, msg: format!("cannot resolve `{name}` without a fact table") });
        };
        let owners: Vec<&String> = fact
            .grain
            .iter()
            .filter(|d| self.schema.dimension(d).is_some_and(|dd| dd.attribute_index(&name).is_some()))
            .collect();
        match owners.as_slice() {
            [one] => Ok(Field::attr(one.as_str(), name)),
            [] => Err(QueryError::UnknownAttribute(name)),
            _ => Err(QueryError::AmbiguousAttribute(name)),
        }
    }

    fn predicate(&mut self, fact: Option<&FactTableDef>) -> Result<Filter, QueryError> {
        let field = self.field(fact)?;
        let predicate = if self.keyword("between") {
            self.pos += 1;
            let lo = self.literal()?;
            if !self.keyword("and") {
                return self.fail("expected AND");
            }
            self.pos += 1;
            Predicate::Between(lo, self.literal()?)
        } else if self.keyword("in") {
            self.pos += 1;
            self.expect(Tok::LParen, "`(`")?;
            let mut set = vec![self.literal()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                set.push(self.literal()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            Predicate::In(set)
        } else {
            let op = match self.next() {
                Some(Tok::Op(op)) => op,
                _ => {
                    self.pos -= 1;
                    return self.fail("expected comparison operator, BETWEEN or IN");
                }
            };
            let v = self.literal()?;
            match op {
                "=" => Predicate::Eq(v),
                "<" => Predicate::Lt(v),
                "<=" => Predicate::Le(v),
                ">" => Predicate::Gt(v),
                _ => Predicate::Ge(v),
            }
        };
        Ok(Filter { field, predicate })
    }
}

/// Parses the text form against `schema`. Names are resolved but not
/// otherwise checked; compilation reports unknown attributes and measures.
pub fn parse_query(text: &str, schema: &SchemaDef) -> Result<QuerySpec, QueryError> {
    let mut p = Parser { toks: lex(text)?, pos: 0, end: text.len(), schema };
    let mut aggregates = vec![p.aggregate()?];
    while p.peek() == Some(&Tok::Comma) {
        p.pos += 1;
        aggregates.push(p.aggregate()?);
    }
    let fact = if p.keyword("from") {
        p.pos += 1;
        p.ident("fact table name")?
    } else if schema.fact_tables.len() == 1 {
        schema.fact_tables[0].name.clone()
    } else {
        return Err(QueryError::FactRequired(schema.fact_tables.len()));
    };
    let def = schema.fact(&fact);
    let mut group_by = Vec::new();
    if p.keyword("by") {
        p.pos += 1;
        group_by.push(p.field(def)?);
        while p.peek() == Some(&Tok::Comma) {
            p.pos += 1;
            group_by.push(p.field(def)?);
        }
    }
    let mut filters = Vec::new();
    if p.keyword("where") {
        p.pos += 1;
        filters.push(p.predicate(def)?);
        while p.peek() == Some(&Tok::Comma) || p.keyword("and") {
            p.pos += 1;
            filters.push(p.predicate(def)?);
        }
    }
    let mut freshness = Freshness::RealTime;
    if p.keyword("freshness") {
        p.pos += 1;
        let level = p.ident("freshness level")?;
        freshness = match Freshness::parse(&level) {
            Some(f) => f,
            None => {
                p.pos -= 1;
                return p.fail(format!("unknown freshness level `{level}`"));
            }
        };
    }
    if p.pos < p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    Ok(QuerySpec { fact, filters, group_by, aggregates, freshness })
}
