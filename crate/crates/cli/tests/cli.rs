use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_layoutsmith"));
    c.env_remove("LAYOUTSMITH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn fixture_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let o = run(&["optimize", "/no/such/graph.ir", "-o", "/tmp/x.ir"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/graph.ir"));
}

#[test]
fn optimize_writes_ir_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt.ir");
    let stats = dir.path().join("stats.json");
    let o = run(&[
        "optimize",
        "--fixture",
        "window-attention",
        "-o",
        out.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["pass"], true);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    for key in ["nodes_before", "nodes_after", "eliminated_by_kind", "fused_pairs"] {
        assert!(s.get(key).is_some(), "{key}");
    }
    assert!(s["nodes_after"].as_u64() < s["nodes_before"].as_u64());

    let v = run(&[
        "verify",
        fixture_file("window_attention.ir").to_str().unwrap(),
        "--against",
        out.to_str().unwrap(),
        "--trials",
        "20",
        "--tol",
        "1e-9",
    ]);
    assert!(v.status.success());
    assert_eq!(json(&v)["pass"], true);
}

#[test]
fn no_eliminate_keeps_node_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.ir");
    let o = run(&[
        "optimize",
        "--fixture",
        "window-attention",
        "--no-eliminate",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r = json(&o);
    assert_eq!(r["rewrite"]["nodes_after"], r["rewrite"]["nodes_before"]);
}

#[test]
fn verify_fails_with_exit_1_on_a_broken_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ir");
    let b = dir.path().join("b.ir");
    std::fs::write(&a, "input x [3,3]\nt = Transpose(x; perm=[1,0])\ny = Unary(t; fn=exp)\noutput y\n").unwrap();
    std::fs::write(&b, "input x [3,3]\ny = Unary(x; fn=exp)\noutput y\n").unwrap();
    let o = run(&["verify", a.to_str().unwrap(), "--against", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o)["pass"], false);
}

#[test]
fn classify_prints_tsv() {
    let o = run(&["classify", "--fixture", "conv-layernorm"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("node\tkind\tclass\treduction_dims"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert!(rows.iter().any(|r| r[1] == "Transpose" && r[2] == "ILD&Fixed"));
}

#[test]
fn simulate_emits_json_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = run(&[
        "simulate",
        "--fixture",
        "conv-residual",
        "--cache-kib",
        "8",
        "--assoc",
        "2",
        "--line-texels",
        "8",
        "--k",
        "1",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    let total = r["total_accesses"].as_u64().unwrap();
    assert!(!r["per_node"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("node,kind,edge,copy,w,h,miss\n"));
    assert_eq!(csv.lines().count() as u64, total + 1);
}

#[test]
fn bad_cache_geometry_is_a_stage_error() {
    let o = run(&["simulate", "--fixture", "conv-residual", "--cache-kib", "1", "--assoc", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_renders_the_same_numbers_as_json() {
    let j = run(&["ablate", "--fixture", "reduction-dims"]);
    let t = run(&["ablate", "--fixture", "reduction-dims", "--format", "table"]);
    assert!(j.status.success() && t.status.success());
    let rungs = json(&j)["rungs"].as_array().unwrap().clone();
    let text = stdout(&t);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, r) in rows.iter().zip(&rungs) {
        let expect = format!("{}\t{}\t{}\t{}", r["rung"].as_str().unwrap(), r["nodes"], r["total_accesses"], r["total_misses"]);
        assert_eq!(*row, expect);
    }
}

#[test]
fn stats_counts_nodes() {
    let o = run(&["stats", "--fixture", "window-attention"]);
    assert!(o.status.success());
    assert_eq!(json(&o)["nodes"], 34);
}

#[test]
fn reports_are_identical_across_processes() {
    let a = run(&["ablate", "--fixture", "window-attention", "--seed", "5"]);
    let b = run(&["ablate", "--fixture", "window-attention", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_comes_from_the_environment() {
    let o = bin()
        .env("LAYOUTSMITH_SEED", "42")
        .args(["verify", "--fixture", "conv-residual", "--trials", "2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(json(&o)["seeds"], serde_json::json!([42, 43]));
}
