//! The `csi` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csi_core::survey::QUESTIONS;
use serde_json::Value;

fn csi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csi"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = csi(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_log_metrics_and_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let scen = scenario("csi_75.toml");
    let summary = ok(&[
        "simulate",
        "--scenario",
        path(&scen),
        "--seed",
        "3",
        "--out",
        path(&a),
    ]);
    assert!(summary.contains("reach share"));
    ok(&[
        "simulate",
        "--scenario",
        path(&scen),
        "--seed",
        "3",
        "--out",
        path(&b),
    ]);
    for f in ["events.jsonl", "metrics.json", "report.json", "report.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["insights"].as_u64().unwrap() > 0);
    assert_eq!(metrics["audit"]["self_deliveries"], 0);
    assert_eq!(metrics["audit"]["duplicate_deliveries"], 0);
    assert_eq!(
        metrics["participation"]["counts"]
            .as_object()
            .unwrap()
            .len(),
        75
    );

    // `report` over the written log reproduces the written report.
    let again = dir.path().join("again.json");
    ok(&[
        "report",
        "--log",
        path(&a.join("events.jsonl")),
        "--out",
        path(&again),
    ]);
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(a.join("report.json")).unwrap()
    );
    let text = dir.path().join("again.txt");
    ok(&[
        "report",
        "--log",
        path(&a.join("events.jsonl")),
        "--out",
        path(&text),
    ]);
    assert_eq!(
        std::fs::read(&text).unwrap(),
        std::fs::read(a.join("report.txt")).unwrap()
    );
}

#[test]
fn shipped_scenarios_all_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["ring_75.toml", "sparse_75.toml", "single_room_75.toml"] {
        let out = dir.path().join(name);
        ok(&[
            "simulate",
            "--scenario",
            path(&scenario(name)),
            "--seed",
            "1",
            "--out",
            path(&out),
        ]);
        let metrics: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap())
                .unwrap();
        if name.starts_with("single_room") {
            assert_eq!(metrics["insights"], 0);
        } else {
            assert!(metrics["deliveries"].as_u64().unwrap() > 0);
        }
    }
}

#[test]
fn analyze_writes_results_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let csi_counts = [97usize, 110, 129, 104, 118, 121, 100];
    let mut csv = format!("respondent,{}\n", QUESTIONS.join(","));
    for r in 0..147 {
        let cells: Vec<&str> = csi_counts
            .iter()
            .map(|k| if r < *k { "csi" } else { "chat" })
            .collect();
        csv.push_str(&format!("r{r:03},{}\n", cells.join(",")));
    }
    let input = dir.path().join("survey.csv");
    std::fs::write(&input, csv).unwrap();
    let out = dir.path().join("results.json");
    let table = ok(&[
        "analyze",
        "--in",
        path(&input),
        "--family-alpha",
        "0.01",
        "--tests",
        "7",
        "--out",
        path(&out),
    ]);
    assert!(table.contains("q1") && table.contains("q7"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["respondents"], 147);
    assert!((doc["per_test_alpha"].as_f64().unwrap() - 0.01 / 7.0).abs() < 1e-18);
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 7);
    for (r, k) in results.iter().zip(csi_counts) {
        assert_eq!(r["csi_count"], k as u64);
        assert_eq!(r["n"], 147);
        assert_eq!(r["significant"], true);
        assert!(r["ci_low"].as_f64().unwrap() > 0.5);
    }
    assert_eq!(
        std::fs::read_to_string(out.with_extension("txt")).unwrap(),
        table
    );
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = csi(&[
        "report",
        "--log",
        "/definitely/not/here.jsonl",
        "--out",
        path(&dir.path().join("r.json")),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let partial = dir.path().join("partial.csv");
    std::fs::write(
        &partial,
        "respondent,q1,q2,q3,q4,q5,q6,q7\nr1,csi,csi,,csi,csi,csi,csi\n",
    )
    .unwrap();
    let out = csi(&[
        "analyze",
        "--in",
        path(&partial),
        "--out",
        path(&dir.path().join("x.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("q3"));

    assert!(!csi(&["simulate", "--seed", "1"]).status.success());
}
