use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use icon_cli::solve::SolveOutput;
use icon_core::families::read_corpus;
use icon_core::Checkpoint;
use tempfile::TempDir;

fn icon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small corpus and a briefly trained tiny model shared by the tests.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    ck: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("d.jsonl");
        let o = icon(&["gen", "--family", "ode1_fwd", "--operators", "10", "--records", "8", "--seed", "1", "--out", p(&data)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = dir.path().join("ck");
        let o = icon(&[
            "train", "--data", p(&data), "--steps", "4", "--checkpoint-every", "2", "--layers", "1",
            "--heads", "2", "--model-dim", "8", "--test-prompts", "2", "--seed", "7", "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        Fixture {
            data,
            ck: out.join("checkpoint.json"),
            _dir: dir,
        }
    })
}

#[test]
fn gen_writes_the_requested_record_count() {
    let f = fixture();
    let c = read_corpus(&f.data).unwrap();
    assert_eq!(c.records.len(), 80);
    let dir = TempDir::new().unwrap();
    let again = dir.path().join("again.jsonl");
    let o = icon(&["gen", "--family", "ode1_fwd", "--operators", "10", "--records", "8", "--seed", "1", "--out", p(&again)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("80 records"));
    assert_eq!(fs::read(&f.data).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn unknown_family_lists_the_registry() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.jsonl");
    let o = icon(&["gen", "--family", "wave_fwd", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("wave_fwd") && msg.contains("ode1_fwd") && msg.contains("heat_fwd"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn train_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.jsonl");
    let o = icon(&["train", "--data", p(&missing), "--steps", "5", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(p(&missing)));

    let o = icon(&["train", "--data", p(&fixture().data), "--steps", "0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least one step"));

    let o = icon(&["train", "--steps", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trained_checkpoint_loads_and_infers() {
    let f = fixture();
    let ck = Checkpoint::load(&f.ck).unwrap();
    assert_eq!(ck.step, 4);
    assert_eq!(ck.families, vec!["ode1_fwd".to_string()]);
    assert!(f.ck.with_file_name("train_log.csv").exists());

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pred.json");
    let o = icon(&["infer", "--checkpoint", p(&f.ck), "--data", p(&f.data), "--demos", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["prediction"].as_array().unwrap().len(), 50);
    assert!(v["relative_error"].as_f64().unwrap() >= 0.0);
}

fn run_solve(spec: &str) -> (Output, Option<SolveOutput>) {
    let dir = TempDir::new().unwrap();
    let spec_path = dir.path().join("spec.json");
    fs::write(&spec_path, spec).unwrap();
    let out = dir.path().join("out.json");
    let o = icon(&["solve", "--spec", p(&spec_path), "--checkpoint", p(&fixture().ck), "--out", p(&out)]);
    let parsed = out
        .exists()
        .then(|| serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap());
    (o, parsed)
}

#[test]
fn solve_decoupled_ode1_has_linear_reference() {
    let (o, out) = run_solve(
        r#"{"equation_type":"ode1_fwd","domain":{"start":0,"end":1,"n":50},
            "parameters":{"a1":0,"a2":1},"boundary":{"u0":0},
            "control":{"polynomial":[1]},"n_demos":5}"#,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = out.unwrap();
    let r = out.reference.unwrap();
    for (c, v) in r.coords.iter().zip(&r.values) {
        assert!((v - c.t).abs() < 1e-12);
    }
    assert!(out.relative_error.unwrap().is_finite());
    assert!(out.flags.is_empty());
}

#[test]
fn solve_ode3_request() {
    let (o, out) = run_solve(
        r#"{"equation_type":"ode3_fwd","domain":{"start":0,"end":1,"n":50},
            "parameters":{"a1":0.5,"a2":0.25,"a3":-0.3,"u0":0},
            "control":{"polynomial":[0,0.5]},"n_demos":3}"#,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = out.unwrap();
    assert_eq!(out.prediction.len(), 50);
    assert_eq!(out.reference.unwrap().len(), 50);
    assert!(out.relative_error.is_some());
}

#[test]
fn solve_heat_is_flagged_out_of_distribution() {
    let (o, out) = run_solve(
        r#"{"equation_type":"heat_fwd","domain":{"start":0,"end":1,"n":50},
            "parameters":{"k":0.005,"alpha":-0.005},"boundary":{"u0":0,"uL":1},
            "control":{"values":[[0,0],[1,1]]},"n_demos":2}"#,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("out-of-distribution"));
    assert_eq!(out.unwrap().flags, vec!["out-of-distribution".to_string()]);
}

#[test]
fn solve_spec_mismatch_prints_the_schema() {
    let (o, out) = run_solve(
        r#"{"equation_type":"poisson_fwd","domain":{"start":0,"end":1,"n":20},
            "parameters":{"u0":0},"control":{"polynomial":[-2]}}"#,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("poisson_fwd expects parameters: u0 in [-1, 1], uL in [-1, 1]"), "{}", stderr(&o));
    assert!(out.is_none());
}

#[test]
fn eval_and_bench_write_reports() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("eval.csv");
    let patterns = dir.path().join("patterns.csv");
    let o = icon(&[
        "eval", "--checkpoint", p(&f.ck), "--data", p(&f.data), "--n-eval", "3", "--heat-cases", "2",
        "--patterns", p(&patterns), "--out", p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("family,demo_count,mean_rel_error,std_rel_error,count,zero_norm_fallbacks\n"));
    assert_eq!(text.lines().count(), 1 + 15);
    assert_eq!(fs::read_to_string(&patterns).unwrap().lines().count(), 3);

    let o = icon(&["eval", "--checkpoint", p(&f.ck), "--data", p(&f.data), "--n-eval", "0", "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));

    let bench = dir.path().join("bench.csv");
    let o = icon(&["bench", "--checkpoint", p(&f.ck), "--sizes", "20,10", "--repeats", "3", "--out", p(&bench)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&bench).unwrap();
    let ns: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["10", "20"]);
    let o = icon(&["bench", "--checkpoint", p(&f.ck), "--repeats", "1", "--out", p(&bench)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let o = icon(&["bench", "--checkpoint", "/nonexistent/ck.json", "--out", p(&dir.path().join("b.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/ck.json"));
}
