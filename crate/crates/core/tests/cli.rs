#![allow(clippy::field_reassign_with_default)]

use std::fs;
use std::path::Path;
use std::process::Command;

use qoslab::config::{preset, ScenarioConfig};
use qoslab::metrics::CSV_HEADER;
use qoslab::netem::ShapingKind;
use qoslab::runner::run_matrix;
use qoslab::sim::{relay_forwarding_latency, run};
use qoslab::{Level, ShapedPath, TopologyKind};

fn qoslab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qoslab"));
    c.env_remove("QOSLAB_OUT");
    c
}

fn run_dirs(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn preset_run_writes_one_directory_per_run() {
    let out = tempfile::tempdir().unwrap();
    let status = qoslab()
        .args(["run", "--scenario", "paper-table6", "--duration-s", "40", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let dirs = run_dirs(out.path());
    assert_eq!(dirs.len(), 6);
    for d in &dirs {
        for f in ["config.toml", "trace.tsv", "reactions.csv", "summary.txt"] {
            assert!(out.path().join(d).join(f).is_file(), "{d}/{f}");
        }
        let csv = fs::read_to_string(out.path().join(d).join("reactions.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    }
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("TranscodingRelay"), "{stdout}");
}

#[test]
fn output_dir_comes_from_the_environment_without_a_flag() {
    let out = tempfile::tempdir().unwrap();
    let status = qoslab()
        .args(["run", "--duration-s", "10"])
        .env("QOSLAB_OUT", out.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert_eq!(run_dirs(out.path()).len(), 1);
}

#[test]
fn scenario_file_with_a_bad_key_exits_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[shaping]\nkind = \"latency\"\nsteeps = []\n").unwrap();
    let o = qoslab()
        .args(["run", "--out"])
        .arg(dir.path())
        .arg("--scenario")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("steeps"), "{err}");
}

#[test]
fn unknown_preset_and_bad_flag_value_fail() {
    let o = qoslab().args(["run", "--scenario", "no-such-thing"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = qoslab().args(["run", "--topology", "mesh"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn defaults_round_trip_through_a_scenario_file() {
    let o = qoslab().arg("defaults").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let parsed = ScenarioConfig::from_toml_str(&text, "defaults").unwrap();
    assert_eq!(parsed, ScenarioConfig::default());
    let checked_in = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/default.toml")).unwrap();
    assert_eq!(checked_in, text, "scenarios/default.toml is out of date");
}

#[test]
fn parallel_and_sequential_runs_write_identical_files() {
    let configs: Vec<ScenarioConfig> = preset("paper-table4")
        .unwrap()
        .into_iter()
        .map(|mut c| {
            c.duration_s = 45.0;
            c
        })
        .collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_matrix(&configs, a.path(), true).all_ok());
    assert!(run_matrix(&configs, b.path(), false).all_ok());
    let dirs = run_dirs(a.path());
    assert_eq!(dirs, run_dirs(b.path()));
    for d in dirs {
        for f in ["trace.tsv", "reactions.csv", "summary.txt", "config.toml"] {
            let x = fs::read(a.path().join(&d).join(f)).unwrap();
            let y = fs::read(b.path().join(&d).join(f)).unwrap();
            assert!(x == y, "{d}/{f} differs");
        }
    }
}

/// Forwarded reports share the uplink with the sender's media, so a backlog
/// there delays them by at least the backlog's drain time.
#[test]
fn forwarded_reports_wait_behind_an_uplink_backlog() {
    let mut c = ScenarioConfig::default();
    c.topology = TopologyKind::ReportingRelay;
    c.fixed_level = Some(Level::Good);
    c.shaping.kind = ShapingKind::Bandwidth;
    c.shaping.path = Some(ShapedPath::Uplink);
    c.shaping.steps = Some(vec![[0.0, 1000.0]]);
    c.duration_s = 10.0;
    let trace = run::<f64>(&c).unwrap();
    // 4000 kbps offered into 1000 kbps: the backlog grows by 3 s of drain time
    // per second until the 2 MB queue (16 s at 1 Mbps) fills.
    for e in trace.iter() {
        if let qoslab::sim::TraceKind::DataChannelRecv { forwarded_at_ms, .. } = e.kind {
            if forwarded_at_ms >= 1500.0 {
                let backlog_ms = (3.0 * forwarded_at_ms).min(16_000.0) - 250.0;
                let waited = e.time_ms - forwarded_at_ms;
                assert!(waited >= backlog_ms, "forwarded at {forwarded_at_ms}, waited {waited}");
            }
        }
    }
    let fwd = relay_forwarding_latency(&trace);
    assert!(!fwd.is_empty());
    assert!(fwd.iter().rev().take(3).all(|d| *d >= 3000.0));
}
