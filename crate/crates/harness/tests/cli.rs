use std::path::PathBuf;
use std::process::Command;

use rtdw_harness::RunReport;

fn rtdw(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rtdw")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

#[test]
fn run_writes_a_report_that_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, stdout) =
        rtdw(&["run", "--scenario", &scenario("trivial.toml"), "--report-dir", d, "--format", "json-lines"]);
    assert_eq!(code, 0, "{stdout}");
    let text = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    let report = RunReport::from_json_lines(&text).unwrap();
    assert_eq!(report.scenario, "trivial");
    assert_eq!(report.mismatches(), 0);
}

#[test]
fn validate_and_config_errors() {
    let (code, stdout) = rtdw(&["validate", "--schema", &scenario("stocks_schema.toml")]);
    assert_eq!(code, 0);
    assert!(stdout.contains("schema is valid"));
    assert_eq!(rtdw(&["run", "--scenario", "/nonexistent.toml"]).0, 2);
    assert_eq!(rtdw(&["generate", "--generator", "weather"]).0, 2);
}

#[test]
fn generate_emits_one_line_per_record() {
    let (code, stdout) = rtdw(&["generate", "--generator", "stocks", "--rate", "3", "--duration", "4"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 12);
}
