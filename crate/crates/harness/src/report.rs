use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Simulated,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Table,
    Csv,
    JsonLines,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "table" => Some(ReportFormat::Table),
            "csv" => Some(ReportFormat::Csv),
            "json-lines" | "jsonl" => Some(ReportFormat::JsonLines),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Table => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source: String,
    pub fact: String,
    pub records: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub snr: f64,
    pub dead_letters: u64,
}

/// Row count and exact measure totals (fixed-point units) of one fact
/// table across every store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTotals {
    pub fact: String,
    pub rows: u64,
    pub sums: Vec<MeasureTotal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureTotal {
    pub measure: String,
    /// Decimal string of the `i128` unit total.
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub rows_loaded: u64,
    pub batches: u64,
    pub flips: u64,
    pub consolidations: u64,
    pub drains: u64,
    pub rejected_overflow: u64,
    pub lag_mean: Option<f64>,
    pub lag_p95: Option<i64>,
    pub lag_max: Option<i64>,
    pub flip_pause_p95_us: Option<u64>,
    pub flip_pause_max_us: Option<u64>,
    pub inserts_per_sec: f64,
    pub queries: u64,
    pub query_p50_us: Option<u64>,
    pub query_p95_us: Option<u64>,
    pub mismatches: u64,
    pub mismatch_examples: Vec<String>,
    /// Forced reverse merges refused because the slice did not fit.
    pub overflow_refusals: u64,
    pub query_errors: u64,
    pub alerts_fired: u64,
    pub alert_digest: String,
    pub totals: Vec<FactTotals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub clock: ClockMode,
    pub sources: Vec<SourceReport>,
    pub strategies: Vec<StrategyReport>,
    pub invariant_violations: Vec<String>,
}

impl RunReport {
    pub fn mismatches(&self) -> u64 {
        self.strategies.iter().map(|s| s.mismatches).sum()
    }

    /// Zero mismatches, no query errors and no invariant violations.
    pub fn passed(&self) -> bool {
        self.mismatches() == 0
            && self.invariant_violations.is_empty()
            && self.strategies.iter().all(|s| s.query_errors == 0)
    }

    /// The report with wall-clock measurements cleared. Equal configs and
    /// seeds give equal views.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        for s in &mut r.strategies {
            s.flip_pause_p95_us = None;
            s.flip_pause_max_us = None;
            s.inserts_per_sec = 0.0;
            s.query_p50_us = None;
            s.query_p95_us = None;
        }
        r
    }

    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == name)
    }

    pub fn from_json_lines(text: &str) -> Result<RunReport, HarnessError> {
        let bad = |msg: String| HarnessError::InvalidConfig(format!("report: {msg}"));
        let mut header = None;
        let (mut sources, mut strategies) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<ReportLine>(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))? {
                ReportLine::Run { scenario, seed, clock, invariant_violations } => {
                    header = Some((scenario, seed, clock, invariant_violations))
                }
                ReportLine::Source(s) => sources.push(s),
                ReportLine::Strategy(s) => strategies.push(s),
            }
        }
        let (scenario, seed, clock, invariant_violations) = header.ok_or_else(|| bad("no run record".into()))?;
        Ok(RunReport { scenario, seed, clock, sources, strategies, invariant_violations })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Run { scenario: String, seed: u64, clock: ClockMode, invariant_violations: Vec<String> },
    Source(SourceReport),
    Strategy(StrategyReport),
}

/// Flat per-strategy row for CSV output.
#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    seed: u64,
    strategy: &'a str,
    rows_loaded: u64,
    batches: u64,
    flips: u64,
    consolidations: u64,
    drains: u64,
    rejected_overflow: u64,
    lag_mean: Option<f64>,
    lag_p95: Option<i64>,
    lag_max: Option<i64>,
    flip_pause_p95_us: Option<u64>,
    flip_pause_max_us: Option<u64>,
    inserts_per_sec: f64,
    queries: u64,
    query_p50_us: Option<u64>,
    query_p95_us: Option<u64>,
    mismatches: u64,
    overflow_refusals: u64,
    query_errors: u64,
    alerts_fired: u64,
    alert_digest: &'a str,
}

/// Longest strategy name the table prints in full.
pub const TABLE_NAME_WIDTH: usize = 22;

/// Cuts `name` to `width` characters, marking the cut with `~`.
pub fn truncate_name(name: &str, width: usize) -> String {
    if name.chars().count() <= width {
        name.to_string()
    } else {
        let mut s: String = name.chars().take(width.saturating_sub(1)).collect();
        s.push('~');
        s
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {}, {:?} clock)", report.scenario, report.seed, report.clock);
    for s in &report.sources {
        let _ = writeln!(
            out,
            "  source {} -> {}: {} records, {} accepted, {} rejected, snr {:.3}, {} dead letters",
            s.source, s.fact, s.records, s.accepted, s.rejected, s.snr, s.dead_letters
        );
    }
    let w = TABLE_NAME_WIDTH;
    let _ = writeln!(
        out,
        "{:<w$} {:>8} {:>9} {:>6} {:>6} {:>10} {:>11} {:>8} {:>10} {:>7}",
        "strategy", "rows", "lag_mean", "p95", "max", "pause_p95", "inserts/s", "queries", "mismatch", "alerts"
    );
    for s in &report.strategies {
        let _ = writeln!(
            out,
            "{:<w$} {:>8} {:>9} {:>6} {:>6} {:>10} {:>11.0} {:>8} {:>10} {:>7}",
            truncate_name(&s.strategy, w),
            s.rows_loaded,
            s.lag_mean.map_or_else(|| "-".to_string(), |m| format!("{m:.2}")),
            opt(s.lag_p95),
            opt(s.lag_max),
            s.flip_pause_p95_us.map_or_else(|| "-".to_string(), |p| format!("{p}us")),
            s.inserts_per_sec,
            s.queries,
            s.mismatches,
            s.alerts_fired,
        );
    }
    for v in &report.invariant_violations {
        let _ = writeln!(out, "  violation: {v}");
    }
    let _ = writeln!(out, "{}", if report.passed() { "PASSED" } else { "FAILED" });
    out
}

/// Writes `report` to `out`.
pub fn emit_report(report: &RunReport, format: ReportFormat, out: &mut dyn Write) -> std::io::Result<()> {
    match format {
        ReportFormat::Table => out.write_all(table(report).as_bytes()),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for s in &report.strategies {
                w.serialize(CsvRow {
                    scenario: &report.scenario,
                    seed: report.seed,
                    strategy: &s.strategy,
                    rows_loaded: s.rows_loaded,
                    batches: s.batches,
                    flips: s.flips,
                    consolidations: s.consolidations,
                    drains: s.drains,
                    rejected_overflow: s.rejected_overflow,
                    lag_mean: s.lag_mean,
                    lag_p95: s.lag_p95,
                    lag_max: s.lag_max,
                    flip_pause_p95_us: s.flip_pause_p95_us,
                    flip_pause_max_us: s.flip_pause_max_us,
                    inserts_per_sec: s.inserts_per_sec,
                    queries: s.queries,
                    query_p50_us: s.query_p50_us,
                    query_p95_us: s.query_p95_us,
                    mismatches: s.mismatches,
                    overflow_refusals: s.overflow_refusals,
                    query_errors: s.query_errors,
                    alerts_fired: s.alerts_fired,
                    alert_digest: &s.alert_digest,
                })
                .map_err(std::io::Error::other)?;
            }
            w.flush()
        }
        ReportFormat::JsonLines => {
            let mut line = |rec: &ReportLine| -> std::io::Result<()> {
                serde_json::to_writer(&mut *out, rec)?;
                out.write_all(b"\n")
            };
            line(&ReportLine::Run {
                scenario: report.scenario.clone(),
                seed: report.seed,
                clock: report.clock,
                invariant_violations: report.invariant_violations.clone(),
            })?;
            for s in &report.sources {
                line(&ReportLine::Source(s.clone()))?;
            }
            for s in &report.strategies {
                line(&ReportLine::Strategy(s.clone()))?;
            }
            Ok(())
        }
    }
}

/// Writes `report.<ext>` into `dir`, creating it if needed.
pub fn write_report(report: &RunReport, format: ReportFormat, dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("report.{}", format.extension()));
    let unwritable =
        |e: std::io::Error| HarnessError::UnwritableOutput { path: path.display().to_string(), reason: e.to_string() };
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path).map_err(unwritable)?);
    emit_report(report, format, &mut file).map_err(unwritable)?;
    file.flush().map_err(unwritable)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        RunReport {
            scenario: "s".into(),
            seed: 7,
            clock: ClockMode::Simulated,
            sources: vec![SourceReport {
                source: "ticketing".into(),
                fact: "ticket_sales".into(),
                records: 10,
                accepted: 9,
                rejected: 1,
                snr: 9.0,
                dead_letters: 0,
            }],
            strategies: ["trickle_direct", "a_strategy_with_a_very_long_name(12345)"]
                .iter()
                .map(|n| StrategyReport {
                    strategy: n.to_string(),
                    lag_mean: Some(0.1 + 0.2),
                    lag_p95: Some(3),
                    totals: vec![FactTotals {
                        fact: "f".into(),
                        rows: 9,
                        sums: vec![MeasureTotal { measure: "m".into(), units: "-12".into() }],
                    }],
                    ..Default::default()
                })
                .collect(),
            invariant_violations: vec![],
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_strategy() {
        let mut buf = Vec::new();
        emit_report(&sample(), ReportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("scenario,seed,strategy,rows_loaded"));
    }

    #[test]
    fn json_lines_round_trip() {
        let mut buf = Vec::new();
        emit_report(&sample(), ReportFormat::JsonLines, &mut buf).unwrap();
        let back = RunReport::from_json_lines(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn table_truncates_names() {
        assert_eq!(truncate_name("short", 8), "short");
        assert_eq!(truncate_name("exactly8", 8), "exactly8");
        assert_eq!(truncate_name("ninechars", 8), "ninecha~");
        let mut buf = Vec::new();
        emit_report(&sample(), ReportFormat::Table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("a_strategy_with_a_ver~ "));
        assert!(text.ends_with("PASSED\n"));
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let err = write_report(&sample(), ReportFormat::Csv, &file.join("sub")).unwrap_err();
        assert!(matches!(err, HarnessError::UnwritableOutput { .. }));
    }
}
