use std::path::Path;
use std::process::{Command, Output};

fn tamsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamsim")).args(args).output().expect("spawn tamsim")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_report_csv_trace_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (json, csv, trace, dump) =
        (dir.path().join("r.json"), dir.path().join("r.csv"), dir.path().join("t.jsonl"), dir.path().join("img.bin"));
    let out = tamsim(&[
        "run",
        "--workload",
        "btio",
        "--n",
        "8",
        "--vars",
        "2",
        "--procs",
        "4",
        "--nodes",
        "2",
        "--local-aggs-per-node",
        "1",
        "--global-aggs",
        "2",
        "--stripe-size",
        "1024",
        "--method",
        "both",
        "--out",
        path(&json),
        "--csv",
        path(&csv),
        "--trace",
        path(&trace),
        "--dump-file",
        path(&dump),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["config"]["workload"]["kind"], "btio");
    assert_eq!(doc["runs"].as_array().unwrap().len(), 2);
    assert_eq!(doc["runs"][0]["report"]["verified"], true);
    assert!(doc["runs"][0]["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));

    let csv = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("method,workload,nprocs,"));
    assert!(lines[1].starts_with("tam,") && lines[2].starts_with("two_phase,"));

    for m in ["tam", "two_phase"] {
        let t = std::fs::read_to_string(dir.path().join(format!("t-{m}.jsonl"))).unwrap();
        assert!(t.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
        let img = std::fs::File::open(dir.path().join(format!("img-{m}.bin"))).unwrap();
        let file = tamsim::simfile::SimFile::read_sidecar(img).unwrap();
        assert_eq!(file.written_bytes(), tamsim::workloads::btio_total_bytes(8, 2));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"procs": 8, "nodes": 2, "local_aggs_per_node": 4, "stripe_size": 512, "method": "two_phase"}"#,
    )
    .unwrap();
    let out = tamsim(&["run", "--config", path(&cfg), "--method", "tam", "--local-aggs-per-node", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["config"]["method"], "tam");
    assert_eq!(doc["config"]["local_aggs_per_node"], 2);
    assert_eq!(doc["config"]["stripe_size"], 512);
    assert_eq!(doc["runs"][0]["report"]["method"], "tam");
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    for (args, field) in [
        (vec!["run", "--procs", "6", "--nodes", "4"], "nodes"),
        (vec!["run", "--local-aggs-per-node", "9"], "local_aggs_per_node"),
        (vec!["run", "--method", "three_phase"], "method"),
        (vec!["run", "--overlap-policy", "whatever"], "overlap_policy"),
        (vec!["run", "--stripe-size", "0"], "stripe_size"),
    ] {
        let out = tamsim(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("`{field}`")), "{args:?}: {err}");
    }
    let out = tamsim(&["run", "--workload", "btio", "--procs", "6", "--nodes", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(tamsim(&["run", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
    assert_eq!(tamsim(&["run", "--bogus"]).status.code(), Some(2));
}

#[test]
fn overlapping_input_aborts_under_strict_and_runs_under_last_writer() {
    let dir = tempfile::tempdir().unwrap();
    let decomp = dir.path().join("d.json");
    std::fs::write(
        &decomp,
        r#"{"header":{"element_size":4,"total_elements":64},
            "processes":[{"rank":0,"offsets":[0],"lengths":[8]},{"rank":1,"offsets":[4],"lengths":[8]}]}"#,
    )
    .unwrap();
    let base = [
        "run",
        "--workload",
        "decomp_file",
        "--decomp",
        path(&decomp),
        "--procs",
        "2",
        "--nodes",
        "1",
        "--global-aggs",
        "1",
        "--stripe-size",
        "16",
    ];
    let out = tamsim(&base);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("both write"));
    let mut lw = base.to_vec();
    lw.extend(["--overlap-policy", "last-writer", "--method", "both"]);
    let out = tamsim(&lw);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("s.json");
    let csv = dir.path().join("s.csv");
    let out = tamsim(&[
        "sweep",
        "--workload",
        "contiguous1d",
        "--procs",
        "16",
        "--nodes",
        "2",
        "--global-aggs",
        "2",
        "--stripe-size",
        "1024",
        "--local-aggs-per-node",
        "1,2,4",
        "--out",
        path(&json),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let docs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let senders: Vec<u64> = docs
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["runs"][0]["report"]["inter"]["senders_max"].as_u64().unwrap())
        .collect();
    assert_eq!(senders, vec![2, 4, 8]);

    let out = tamsim(&["report", path(&json)]);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).all(|l| l.trim_end().ends_with("yes")));

    let out = tamsim(&["report", path(&json), "--csv", path(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    assert_eq!(tamsim(&["report", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn no_verify_leaves_verdict_empty() {
    let out = tamsim(&["run", "--no-verify"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["runs"][0]["report"]["verified"].is_null());
    let out = tamsim(&["run", "--no-verify", "--verify"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["runs"][0]["report"]["verified"], true);
}
