use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deconfound"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for tag in ["a", "b"] {
        let data = format!("{tag}.jsonl");
        let mask = format!("{tag}_mask.json");
        let model = format!("{tag}_model.json");
        ok(d, &["gen", "--env", "cartpole", "--n", "20", "--seed", "3", "--out", &data]);
        ok(d, &["mask", "--data", &data, "--out-mask", &mask, "--out-report", &format!("{tag}_report.csv")]);
        ok(d, &["train", "--data", &data, "--mask", &mask, "--out", &model]);
        ok(d, &["eval", "--model", &model, "--env", "cartpole", "--rollouts", "3", "--seeds", "2",
            "--out", &format!("{tag}_eval.csv"), "--summary", &format!("{tag}_summary.csv")]);
    }
    for f in ["{}.jsonl", "{}.manifest.json", "{}_mask.json", "{}_report.csv", "{}_model.json", "{}_eval.csv", "{}_summary.csv"] {
        let a = fs::read(d.join(f.replace("{}", "a"))).unwrap();
        let b = fs::read(d.join(f.replace("{}", "b"))).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let eval = fs::read_to_string(d.join("a_eval.csv")).unwrap();
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows[0], "rollout_idx,loss,truncated_flag");
    assert_eq!(rows.len(), 7);
    assert!(rows[6].starts_with("5,"));
}

#[test]
fn huge_gamma_masks_everything() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--fixture", "prop1_fork", "--init", "confounded", "--n", "200", "--out", "f.jsonl"]);
    let stdout = ok(d, &["mask", "--data", "f.jsonl", "--gamma", "1e9", "--out-mask", "m.json"]);
    assert!(stdout.contains("(1,1)"), "{stdout}");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert!(doc["mask"].as_array().unwrap().iter().all(|b| b == 1));
    ok(d, &["train", "--data", "f.jsonl", "--mask", "m.json", "--out", "p.json"]);
    ok(d, &["train", "--data", "f.jsonl", "--mask", "manual", "--policy", "mlp", "--epochs", "2", "--out", "q.json"]);
}

#[test]
fn usage_and_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| run(d, args).status.code();
    assert_eq!(code(&["gen", "--env", "pendulum", "--n", "10", "--out", "x.jsonl"]), Some(2));
    assert_eq!(code(&["gen", "--env", "cartpole", "--n", "4", "--out", "x.jsonl"]), Some(2));
    assert_eq!(code(&["gen", "--env", "cartpole", "--fixture", "fig1", "--n", "10", "--out", "x.jsonl"]), Some(2));
    assert_eq!(code(&["mask", "--data", "missing.jsonl", "--out-mask", "m.json"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    ok(d, &["gen", "--fixture", "fig1", "--n", "10", "--out", "f.jsonl"]);
    assert_eq!(code(&["mask", "--data", "f.jsonl", "--horizon", "9", "--out-mask", "m.json"]), Some(2));
    assert_eq!(code(&["mask", "--data", "f.jsonl", "--gamma", "-1", "--out-mask", "m.json"]), Some(2));
    assert_eq!(code(&["train", "--data", "f.jsonl", "--mask", "nope.json", "--out", "p.json"]), Some(2));
}

#[test]
fn verify_suites_pass_on_small_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for suite in ["conservativeness", "monotonicity", "prop1"] {
        let out = run(d, &["verify", "--suite", suite, "--trials", "3", "--n", "3000", "--seed", "7", "--out", "v.json"]);
        assert_eq!(out.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(d.join("v.json").exists());
    }
}

#[test]
fn report_writes_three_arms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["report", "--env", "cartpole", "--n", "40", "--seeds", "2", "--rollouts", "2", "--out", "r.csv"]);
    let csv = fs::read_to_string(d.join("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "seed,arm,mask,mean_loss,sd_loss,rollouts,truncated");
    assert_eq!(rows.len(), 7);
    assert!(rows[3].starts_with("0,manual,\"(0,0,0,0,1)\""));
}
