use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn omega(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omega-sim")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const RING10_RUN: &[&str] = &[
    "run", "--topology", "ring", "--n", "10", "--K", "4", "--D", "12", "--T", "1", "--drop-rate", "0.01",
    "--mode", "iid", "--algorithm", "known", "--seed", "1", "--horizon", "5000",
];

#[test]
fn run_prints_result_and_effective_config() {
    let out = omega(RING10_RUN);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["config"]["topology"]["kind"], "ring");
    assert_eq!(v["config"]["channel"]["K"], 4);
    assert_eq!(v["config"]["seed"], 1);
    assert_eq!(v["result"]["n"], 10);
    assert_eq!(v["result"]["diameter"], 5);
    assert_eq!(v["result"]["delta"], 15);
    assert_eq!(v["result"]["expected_leader"], 1);
    let c = v["result"]["convergence_time"].as_u64().expect("converges");
    assert!(c <= 5000);
    assert!(v["result"]["oracle_violations"].as_array().unwrap().is_empty());
}

#[test]
fn identical_invocations_are_byte_identical() {
    let a = omega(RING10_RUN);
    let b = omega(RING10_RUN);
    assert_eq!(a.stdout, b.stdout);
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, SWEEP).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = omega(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = omega(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(omega(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_inputs_are_usage_errors() {
    let bad_crash = omega(&["validate", "--topology", "ring", "--n", "4", "--crash", "3:5"]);
    assert_eq!(bad_crash.status.code(), Some(2));
    let missing = omega(&["run", "--topology", "ring", "--n", "4"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing field"));
    let bad_rate = omega(&[
        "run", "--topology", "ring", "--n", "4", "--K", "4", "--D", "12", "--drop-rate", "1.5", "--mode", "iid",
        "--algorithm", "known", "--horizon", "100",
    ]);
    assert_eq!(bad_rate.status.code(), Some(2));
}

const RING4: &[&str] = &[
    "--topology", "ring", "--n", "4", "--K", "4", "--D", "12", "--drop-rate", "0", "--mode", "iid", "--algorithm",
    "known", "--horizon", "200",
];

#[test]
fn validate_names_the_disconnecting_crash_set() {
    let mut args = vec!["validate"];
    args.extend_from_slice(RING4);
    args.extend_from_slice(&["--crash", "2@5", "--crash", "4@6"]);
    let out = omega(&args);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["valid"], false);
    assert!(v["violations"][0].as_str().unwrap().starts_with("span-tree"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("span-tree"));

    let mut ok = vec!["validate"];
    ok.extend_from_slice(RING4);
    ok.extend_from_slice(&["--crash", "2@5"]);
    let out = omega(&ok);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["valid"], true);
}

#[test]
fn run_refuses_an_invalid_scenario() {
    let out = omega(&[
        "run", "--topology", "ring", "--n", "4", "--K", "4", "--D", "12", "--drop-rate", "0", "--mode", "iid",
        "--algorithm", "unknown", "--horizon", "200", "--crash", "2@5", "--crash", "4@6",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("connectivity"));
}

#[test]
fn flags_override_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sc.json");
    std::fs::write(
        &path,
        r#"{"topology": {"kind": "ring", "n": 6},
            "channel": {"K": 2, "D": 3, "mode": "strict", "drop_rate": 0.5},
            "algorithm": "unknown", "horizon": 400, "seed": 9}"#,
    )
    .unwrap();
    let file_only = omega(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(file_only.status.code(), Some(0));
    let v = json(&file_only);
    assert_eq!(v["result"]["n"], 6);
    assert_eq!(v["config"]["algorithm"], "unknown");

    let out = omega(&["run", "--scenario", path.to_str().unwrap(), "--n", "8", "--seed", "3", "--D", "5"]);
    let v = json(&out);
    assert_eq!(v["config"]["topology"]["n"], 8);
    assert_eq!(v["config"]["seed"], 3);
    assert_eq!(v["config"]["channel"]["D"], 5);
    assert_eq!(v["config"]["channel"]["K"], 2);
    assert_eq!(v["config"]["channel"]["mode"], "strict");
    assert_eq!(v["result"]["n"], 8);
}

#[test]
fn edge_list_paths_resolve_against_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("graphs")).unwrap();
    std::fs::write(dir.path().join("graphs/line.txt"), "# a path\n1 2\n2 3\n").unwrap();
    let path = dir.path().join("sc.json");
    std::fs::write(
        &path,
        r#"{"topology": {"kind": "edge_list", "path": "graphs/line.txt"},
            "channel": {"K": 1, "D": 1, "mode": "iid", "drop_rate": 0.0},
            "algorithm": "known", "horizon": 100}"#,
    )
    .unwrap();
    let out = omega(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["result"]["n"], 3);
    assert_eq!(v["result"]["diameter"], 2);

    let other = dir.path().join("graphs/pair.txt");
    std::fs::write(&other, "1 2\n").unwrap();
    let out = omega(&["run", "--scenario", path.to_str().unwrap(), "--edges", other.to_str().unwrap()]);
    assert_eq!(json(&out)["result"]["n"], 2);
}

#[test]
fn log_is_written_as_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let mut args = vec!["run"];
    args.extend_from_slice(RING4);
    args.extend_from_slice(&["--log", log.to_str().unwrap()]);
    let out = omega(&args);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty());
    let sends = text.lines().filter(|l| l.contains("\"send\"")).count() as u64;
    assert_eq!(sends, json(&out)["result"]["total_messages"].as_u64().unwrap());
}

#[test]
fn reelection_reports_timing() {
    let out = omega(&[
        "run", "--topology", "ring", "--n", "10", "--K", "4", "--D", "12", "--drop-rate", "0.01", "--mode", "iid",
        "--algorithm", "known", "--seed", "2", "--horizon", "3000", "--hopbound-selection", "longest",
        "--reelection",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let r = &v["reelection"];
    assert_eq!(r["victim"], 1);
    assert_eq!(r["crash_time"], v["result"]["convergence_time"]);
    assert_eq!(r["after_crash"]["expected_leader"], 2);
    assert!(r["reelection_time"].as_u64().is_some());
    assert!(r["discard_time"].as_f64().is_some());
}

const SWEEP: &str = r#"{
    "base": {
        "topology": {"kind": "ring", "n": 4},
        "channel": {"K": 4, "D": 12, "mode": "iid", "drop_rate": 0.01},
        "algorithm": "known",
        "hopbound_selection": "longest",
        "horizon": 1000
    },
    "sizes": [4, 8],
    "seeds": [1, 2]
}"#;

#[test]
fn sweep_writes_declared_columns() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, SWEEP).unwrap();
    let out = omega(&["sweep", "--config", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("n,diameter,K,D,T,drop_rate,mode,seed,convergence_time,discard_time,reelection_time,total_messages,max_message_bits")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 13));
    assert_eq!(rows.iter().map(|r| r[7]).collect::<Vec<_>>(), ["1", "2", "mean", "1", "2", "mean"]);
    assert!(rows.iter().all(|r| r[9].is_empty() && r[10].is_empty()));
    let echoed: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(echoed["sizes"], serde_json::json!([4, 8]));
}

#[test]
fn missing_sweep_file_is_a_usage_error() {
    let out = omega(&["sweep", "--config", Path::new("/nonexistent/sweep.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_examples_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        if v.get("base").is_some() {
            serde_json::from_value::<omega_core::harness::SweepSpec>(v).unwrap();
        } else {
            let out = omega(&["validate", "--scenario", path.to_str().unwrap()]);
            assert_eq!(out.status.code(), Some(0), "{}", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 5);
}
