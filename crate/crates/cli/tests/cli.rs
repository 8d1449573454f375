//! Exercises the binary end to end against the shipped scenario files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bftsched"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bftsched-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_then_replay_roundtrip() {
    let out = tmp_dir("run");
    let status = bin()
        .args(["run"])
        .arg(repo_root().join("scenarios/byzantine.json"))
        .args(["--out-dir"])
        .arg(&out)
        .args(["--format", "text"])
        .output()
        .unwrap();
    assert!(status.status.success(), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("rrt_ms:"), "summary printed: {stdout}");

    let trace = out.join("byzantine.trace.jsonl");
    let report = out.join("byzantine.report.txt");
    assert!(trace.exists() && report.exists());
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("config digest:"));
    assert!(report_text.contains("jitter"), "jitter disclaimer present");
    // Tab-separated per-transaction verdict log with hostile rejections.
    let ledger = std::fs::read_to_string(out.join("byzantine.ledger.tsv")).unwrap();
    assert!(ledger.lines().all(|l| l.split('\t').count() == 6));
    assert!(ledger.contains("\tapplied"));
    assert!(ledger.contains("rejected:"));

    let status = bin().arg("replay").arg(&trace).output().unwrap();
    assert!(status.status.success(), "replay verdict: {}", String::from_utf8_lossy(&status.stdout));
    assert!(String::from_utf8_lossy(&status.stdout).contains("identical"));
}

#[test]
fn run_with_seed_override_is_deterministic() {
    let out_a = tmp_dir("seed-a");
    let out_b = tmp_dir("seed-b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .arg("run")
            .arg(repo_root().join("scenarios/byzantine.json"))
            .args(["--seed", "99", "--out-dir"])
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success());
    }
    let csv_a = std::fs::read(out_a.join("byzantine.report.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("byzantine.report.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "same seed, byte-identical CSV");
    let header = String::from_utf8_lossy(&csv_a);
    assert!(header.starts_with(
        "request_id,source,sent_ms,active_ms,finalized_ms,delivered_ms,rrt_ms,exec_total_ms,fo_ms,attempts,status"
    ));
}

#[test]
fn sweep_reports_scaling_fit() {
    let out = tmp_dir("sweep");
    let status = bin()
        .arg("sweep")
        .args(["--nodes", "4,7"])
        .arg(repo_root().join("scenarios/sweep.json"))
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("message-count growth exponent"), "{stdout}");
    assert!(out.join("sweep.n04.report.csv").exists());
    assert!(out.join("sweep.n07.report.csv").exists());
}

#[test]
fn invalid_scenario_fails_with_diagnostics() {
    let dir = tmp_dir("invalid");
    let bad = dir.join("bad.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_root().join("scenarios/sweep.json")).unwrap())
            .unwrap();
    config["f"] = serde_json::json!(7); // 16 < 3*7+1
    std::fs::write(&bad, serde_json::to_string(&config).unwrap()).unwrap();
    let output = bin().arg("run").arg(&bad).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("3*f+1"));
}
