use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mglrt_cli::output::{read_csv, read_jsonl};

fn mglrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mglrt")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn toy_config(dir: &Path) -> String {
    let path = dir.join("toy.toml");
    let text = format!(
        r#"seed = 5
detectors = ["mglrt", "cfar", "normalized", "genie"]
target_pfa = 0.05

[system]
n = 4
m = 1
l = 2
p = 1
q = 16
k_users = 2

[sweep]
snr_db = [0.0, 10.0]

[trials]
detection = 100
calibration = 400

[output]
dir = "{}"
"#,
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn selftest_passes_and_catches_corruption() {
    let ok = mglrt(&["selftest", "--threads", "2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("fast-vs-direct statistic") && stdout.contains("PASS"));

    let bad = mglrt(&["selftest", "--corrupt-geometry"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fast-vs-direct statistic"));
}

#[test]
fn sweep_needs_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = mglrt(&["sweep", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibrate"));
}

#[test]
fn calibrate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    assert_eq!(code(&mglrt(&["calibrate", "--config", &cfg])), 0);
    let table = dir.path().join("out/thresholds.json");
    let first = fs::read_to_string(&table).unwrap();
    fs::remove_file(&table).unwrap();
    assert_eq!(code(&mglrt(&["calibrate", "--config", &cfg, "--threads", "3"])), 0);
    assert_eq!(fs::read_to_string(&table).unwrap(), first);
    // K=2: one family per SNR shared by every detector.
    let json: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 2 * 4);
}

#[test]
fn default_config_gives_one_threshold_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default.toml");
    fs::write(&cfg, "[trials]\ncalibration = 1000\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = mglrt(&["calibrate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("thresholds.json")).unwrap()).unwrap();
    let entries = json["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["detector"], "mglrt");
    assert_eq!(entries[0]["target_pfa"], 0.01);
}

#[test]
fn config_errors_exit_with_2_and_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\ntarget_pfa = 0\n").unwrap();
    let out = mglrt(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:2:") && err.contains("target_pfa"), "{err}");

    fs::write(&cfg, "[system]\nn = 15\ncolour = 3\n").unwrap();
    let out = mglrt(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:3:"));

    assert_eq!(code(&mglrt(&["sweep", "--preset", "fig7"])), 2);
}

#[test]
fn sweep_writes_resumes_and_ignores_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    assert_eq!(code(&mglrt(&["calibrate", "--config", &cfg])), 0);
    let out = mglrt(&["sweep", "--config", &cfg, "--threads", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("normalized"));
    let csv_path = dir.path().join("out/curves.csv");
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("detector,snr_db,sir_db,fd,alpha,k_users,q_active,mode,threshold,rate,ci_lo,ci_hi,trials,seed\n"));
    let rows = read_csv(&csv_path).unwrap();
    assert_eq!(rows.len(), 2 * 4);
    assert!(rows.iter().all(|r| r.seed == 5 && r.trials == 100 && r.ci_lo <= r.rate && r.rate <= r.ci_hi));

    // Everything is present: a rerun appends nothing.
    let again = mglrt(&["sweep", "--config", &cfg]);
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), csv);

    // A fresh output with another thread count reproduces the rows.
    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    fs::copy(dir.path().join("out/thresholds.json"), other.join("thresholds.json")).unwrap();
    let out = mglrt(&["sweep", "--config", &cfg, "--threads", "3", "--out", other.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(other.join("curves.csv")).unwrap(), csv);

    let records = read_jsonl(&dir.path().join("out/curves.jsonl")).unwrap();
    assert_eq!(records.len(), rows.len());
    assert!(records.iter().all(|r| !r.family.is_empty() && !r.record.code_fingerprint.is_empty()));
}

#[test]
fn run_measures_one_point_with_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    // The configured grid has two SNR values.
    assert_eq!(code(&mglrt(&["run", "--config", &cfg])), 2);
    let text = fs::read_to_string(&cfg).unwrap().replace("snr_db = [0.0, 10.0]", "snr_db = [10.0]");
    fs::write(&cfg, text).unwrap();
    let out = mglrt(&["run", "--config", &cfg, "--seed", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let snapshot = dir.path().join("out/snapshot.json");
    let snap: serde_json::Value = serde_json::from_str(&fs::read_to_string(&snapshot).unwrap()).unwrap();
    assert_eq!(snap["hypothesis"], "H1");
    assert_eq!(snap["delays"].as_array().unwrap().len(), 2);
    let records = read_jsonl(&dir.path().join("out/curves.jsonl")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.snapshot.as_deref() == Some(snapshot.to_str().unwrap()) && r.record.seed == 8));
}
