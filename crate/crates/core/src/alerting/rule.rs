//! Line form of an alert rule:
//!
//! ```text
//! rule    := id ":" query "FIRE WHEN" op threshold trigger
//! op      := ">" | "<" | ">=" | "<=" | crosses
//! trigger := EVERY period | ON EVENT [WINDOW period]
//! period  := minutes ["m" | "min"]
//! ```
//!
//! `query` uses the query grammar. In a rules file, blank lines and lines
//! starting with `#` are ignored.

use super::{AlertError, AlertRule, Comparison, Trigger, CYCLE_MINUTES};
use crate::model::SchemaDef;
use crate::query::parse_query;

fn minutes(tok: &str) -> Option<i64> {
    let digits = tok.trim_end_matches("min").trim_end_matches('m');
    digits.parse().ok()
}

pub fn parse_rule(line: &str, schema: &SchemaDef) -> Result<AlertRule, AlertError> {
    parse_at(line, schema, 1)
}

fn parse_at(line: &str, schema: &SchemaDef, lineno: usize) -> Result<AlertRule, AlertError> {
    let err = |msg: String| AlertError::Parse { line: lineno, msg };
    let (id, rest) = line.split_once(':').ok_or_else(|| err("expected `id:` before the query".into()))?;
    let id = id.trim();
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(err(format!("bad rule id `{id}`")));
    }
    let upper = rest.to_ascii_uppercase();
    let at = upper.rfind("FIRE WHEN").ok_or_else(|| err("missing FIRE WHEN".into()))?;
    let spec = parse_query(&rest[..at], schema).map_err(|e| err(e.to_string()))?;
    let words: Vec<&str> = rest[at + "FIRE WHEN".len()..].split_whitespace().collect();
    let [op, thr, tail @ ..] = words.as_slice() else {
        return Err(err("expected a comparison and a threshold".into()));
    };
    let comparison = Comparison::parse(op).ok_or_else(|| err(format!("unknown comparison `{op}`")))?;
    let threshold: f64 = thr.parse().map_err(|_| err(format!("bad threshold `{thr}`")))?;
    let upper_tail: Vec<String> = tail.iter().map(|w| w.to_ascii_uppercase()).collect();
    let period = |tok: &str| -> Result<i64, AlertError> {
        let m = minutes(tok).ok_or_else(|| err(format!("bad period `{tok}`")))?;
        if CYCLE_MINUTES.contains(&m) {
            Ok(m)
        } else {
            Err(err(AlertError::InvalidPeriod(m).to_string()))
        }
    };
    let trigger = match upper_tail.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["EVERY", _] => Trigger::Cycle { minutes: period(tail[1])? },
        ["EVERY", _, "MIN" | "MINUTE" | "MINUTES"] => Trigger::Cycle { minutes: period(tail[1])? },
        ["ON", "EVENT"] => Trigger::OnEvent { window_minutes: 1 },
        ["ON", "EVENT", "WINDOW", _] => Trigger::OnEvent { window_minutes: period(tail[3])? },
        _ => return Err(err(format!("expected EVERY <period> or ON EVENT, found `{}`", tail.join(" ")))),
    };
    Ok(AlertRule::new(id, spec, comparison, threshold, trigger))
}

pub fn parse_rules(text: &str, schema: &SchemaDef) -> Result<Vec<AlertRule>, AlertError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_at(l, schema, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Freshness;

    fn schema() -> SchemaDef {
        SchemaDef::from_toml_str(
            r#"
            [[dimensions]]
            name = "stock"
            natural_key = "symbol"
            scd_policy = "overwrite"
            attributes = [{ name = "symbol", kind = "text" }, { name = "sector", kind = "text" }]

            [[fact_tables]]
            name = "ticks"
            grain = ["stock"]
            duration_days = 30
            measures = [{ name = "volume", aggregator = "sum" }]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn cycle_and_event_forms() {
        let s = schema();
        let r = parse_rule("hot: SUM(volume) WHERE sector = 'tech' FIRE WHEN > 1000 EVERY 5m", &s).unwrap();
        assert_eq!(r.id, "hot");
        assert_eq!(r.comparison, Comparison::Gt);
        assert_eq!(r.threshold, 1000.0);
        assert_eq!(r.trigger, Trigger::Cycle { minutes: 5 });
        assert_eq!(r.spec.freshness, Freshness::RealTime);

        let r = parse_rule("spike: COUNT(*) FIRE WHEN crosses 10 ON EVENT", &s).unwrap();
        assert_eq!(r.trigger, Trigger::OnEvent { window_minutes: 1 });
        let r = parse_rule("spike: COUNT(*) FIRE WHEN >= 10 on event window 15", &s).unwrap();
        assert_eq!(r.trigger, Trigger::OnEvent { window_minutes: 15 });
    }

    #[test]
    fn display_parses_back() {
        let s = schema();
        let r = parse_rule("a: MAX(volume) FIRE WHEN <= 2.5 EVERY 30 minutes", &s).unwrap();
        assert_eq!(parse_rule(&r.to_string(), &s).unwrap(), r);
    }

    #[test]
    fn rejects() {
        let s = schema();
        assert!(parse_rule("a: SUM(volume) FIRE WHEN > 1 EVERY 7m", &s).is_err());
        assert!(parse_rule("SUM(volume) FIRE WHEN > 1 EVERY 5m", &s).is_err());
        assert!(parse_rule("a: SUM(volume) FIRE WHEN ~ 1 EVERY 5m", &s).is_err());
        let e = parse_rules("# c\n\na: SUM(volume) FIRE WHEN > x EVERY 5m\n", &s).unwrap_err();
        assert!(matches!(e, AlertError::Parse { line: 3, .. }));
    }
}
