use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssp")).args(args).current_dir(dir).output().unwrap()
}

const ONE_STEP: &str = r#"{"S": 1, "A": 1, "s0": 0, "transitions": [[[0.0, 1.0]]],
    "costs": [[{"kind": "deterministic", "mean": 0.4}]]}"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_and_oracle_on_a_one_step_model() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), ONE_STEP).unwrap();
    assert!(ssp(&["validate", "m.json"], dir.path()).status.success());
    let out = ssp(&["oracle", "m.json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["b_star"].as_f64().unwrap() - 0.4).abs() < 1e-6);
    assert!((v["t_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn invalid_model_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = ONE_STEP.replace("[0.0, 1.0]", "[0.0, 0.9]");
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = ssp(&["validate", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stdout.is_empty());
    assert_eq!(ssp(&["oracle", "bad.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_spec_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.json"), r#"{"env": {"kind": "loop_chain", "states": 5, "p_min": 0.2}, "episodes": 3, "seeds": []}"#).unwrap();
    assert_eq!(ssp(&["run", "s.json"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("u.json"), r#"{"env": {"kind": "loop_chain", "states": 5, "p_min": 0.2}, "episodes": 3, "seeds": [1], "bogus": 1}"#).unwrap();
    assert_eq!(ssp(&["run", "u.json"], dir.path()).status.code(), Some(2));
    assert_eq!(ssp(&["run", "missing.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn single_episode_run_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), ONE_STEP).unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"env": {"kind": "file", "path": "m.json"}, "algorithm": "ebssp", "B": 1, "episodes": 1, "seeds": [0]}"#,
    )
    .unwrap();
    let out = ssp(&["run", "s.json", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    let csv = fs::read_to_string(res.join("regret.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,episode,cum_cost,cum_regret,steps,B_tilde");
    assert_eq!(lines.len(), 2);
    for f in ["plotdata.csv", "summary.json", "runs.jsonl"] {
        assert!(res.join(f).exists(), "{f}");
    }
    assert!(json(&res.join("summary.json")).get("phase_counts").is_none());
}

#[test]
fn parameter_free_summary_has_phase_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"env": {"kind": "random_ssp", "states": 3, "actions": 2, "goal_prob_floor": 0.1,
            "cost_low": 0.2, "cost_high": 1.0, "seed": 5}, "algorithm": "parameter_free", "episodes": 50,
            "seeds": [1, 2], "output_dir": "pf"}"#,
    )
    .unwrap();
    assert!(ssp(&["run", "s.json"], dir.path()).status.success());
    let summary = json(&dir.path().join("pf/summary.json"));
    let counts = summary["phase_counts"]["per_seed"].as_array().unwrap();
    assert_eq!(counts.len(), 2);
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"env": {"kind": "random_ssp", "states": 3, "actions": 2, "goal_prob_floor": 0.1,
            "cost_low": 0.2, "cost_high": 1.0, "seed": 5}, "episodes": 200, "seeds": [1, 2, 3]}"#,
    )
    .unwrap();
    let out = ssp(&["sweep", "s.json", "--k-grid", "50,100,200", "--out", "sw"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(ssp(&["sweep", "s.json", "--k-grid", "100,50"], dir.path()).status.code(), Some(2));
}

#[test]
fn step_cap_counts_as_seed_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"env": {"kind": "loop_chain", "states": 5, "p_min": 0.2}, "episodes": 100, "seeds": [0], "step_cap": 20}"#,
    )
    .unwrap();
    assert_eq!(ssp(&["run", "s.json", "--out", "o"], dir.path()).status.code(), Some(3));
    let summary = json(&dir.path().join("o/summary.json"));
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
}

#[test]
fn generated_models_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssp(&["generate", "random", "--states", "4", "--actions", "2", "--goal-prob-floor", "0.1", "--seed", "3"], dir.path());
    assert!(out.status.success());
    fs::write(dir.path().join("g.json"), &out.stdout).unwrap();
    assert!(ssp(&["validate", "g.json"], dir.path()).status.success());
    let out = ssp(&["generate", "loop-chain", "--states", "5", "--p-min", "0.2"], dir.path());
    fs::write(dir.path().join("c.json"), &out.stdout).unwrap();
    assert!(ssp(&["validate", "c.json"], dir.path()).status.success());
}
