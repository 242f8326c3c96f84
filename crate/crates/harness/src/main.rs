use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rtdw_core::alerting::{AlertSink, JsonLinesSink};
use rtdw_core::model::{validate_schema, SchemaDef};
use rtdw_core::query::QueryEngine;
use rtdw_core::storage::{Warehouse, WarehouseConfig};
use rtdw_core::WallClock;
use rtdw_harness::generate::write_records;
use rtdw_harness::{
    emit_report, execute, generate_workload, write_report, GenParams, HarnessError, ReportFormat, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "rtdw", version, about = "Real-time warehouse workload simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and check every answer against the oracle.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Alert rule file, overriding the scenario's.
        #[arg(long)]
        alerts: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[arg(long, default_value = "table", value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Evaluate one query, optionally against a store rebuilt from its log.
    Query {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        expr: String,
        #[arg(long)]
        wal: Option<PathBuf>,
    },
    /// Check a schema file.
    Validate {
        #[arg(long)]
        schema: PathBuf,
    },
    /// Write a generator's records as JSON lines.
    Generate {
        #[arg(long)]
        generator: String,
        #[arg(long, default_value_t = 1)]
        rate: u32,
        #[arg(long, default_value_t = 100)]
        duration: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        dirty_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    ReportFormat::parse(s).ok_or_else(|| format!("unknown format `{s}` (table, csv, json-lines)"))
}

fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::UnwritableOutput { path: path.display().to_string(), reason: e.to_string() }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { scenario, seed, alerts, report_dir, format } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = alerts {
                cfg.alerts = Some(std::env::current_dir().unwrap_or_default().join(a));
            }
            let outcome = execute(&cfg)?;
            emit_report(&outcome.report, format, &mut std::io::stdout().lock()).map_err(io_err("stdout".as_ref()))?;
            if let Some(dir) = report_dir {
                let path = write_report(&outcome.report, format, &dir)?;
                eprintln!("report written to {}", path.display());
                for (strategy, events) in &outcome.alerts {
                    if events.is_empty() {
                        continue;
                    }
                    let name: String =
                        strategy.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
                    let path = dir.join(format!("alerts_{name}.jsonl"));
                    let mut sink = JsonLinesSink::open(&path).map_err(io_err(&path))?;
                    for e in events {
                        sink.deliver(e).map_err(|e| HarnessError::UnwritableOutput {
                            path: path.display().to_string(),
                            reason: e.to_string(),
                        })?;
                    }
                }
            }
            Ok(outcome.report.passed())
        }
        Command::Query { schema, expr, wal } => {
            let schema = SchemaDef::load(&schema)?;
            let mut config = WarehouseConfig::default();
            if let Some(w) = wal {
                config = config.with_wal(w);
            }
            let wh = Arc::new(Warehouse::new(schema, config, Arc::new(WallClock))?);
            let engine = QueryEngine::new(wh);
            let spec = engine.parse(&expr)?;
            let result = engine.execute(&spec)?;
            let mut out = std::io::stdout().lock();
            let header: Vec<&str> =
                result.group_columns.iter().chain(&result.value_columns).map(String::as_str).collect();
            let _ = writeln!(out, "{}", header.join("\t"));
            for (key, values) in &result.groups {
                let cells: Vec<String> =
                    key.iter().map(|v| v.to_string()).chain(values.iter().map(|v| v.to_string())).collect();
                let _ = writeln!(out, "{}", cells.join("\t"));
            }
            let m = &result.metadata;
            let _ = writeln!(
                out,
                "# epoch {} route {:?} rows_scanned {} staleness_bound {}",
                m.epoch,
                m.route,
                m.rows_scanned,
                m.staleness_bound.map_or_else(|| "-".to_string(), |t| t.to_string())
            );
            Ok(true)
        }
        Command::Validate { schema } => {
            let schema = SchemaDef::load(&schema)?;
            let report = validate_schema(&schema);
            if report.is_valid() {
                println!(
                    "schema is valid: {} dimensions, {} fact tables",
                    schema.dimensions.len(),
                    schema.fact_tables.len()
                );
            } else {
                for v in &report.violations {
                    println!("{v}");
                }
            }
            Ok(report.is_valid())
        }
        Command::Generate { generator, rate, duration, seed, dirty_fraction, out } => {
            let records = generate_workload(&generator, &GenParams::new(rate, duration, seed).dirty(dirty_fraction))?;
            match out {
                Some(path) => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
                    write_records(&mut f, &records).map_err(io_err(&path))?;
                    f.flush().map_err(io_err(&path))?;
                }
                None => write_records(&mut std::io::stdout().lock(), &records).map_err(io_err("stdout".as_ref()))?,
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
