use std::fs;

use ssp_core::harness::{self, ExperimentSpec, Prepared};

fn spec(json: &str) -> ExperimentSpec {
    let s = ExperimentSpec::from_json(json).unwrap();
    s.validate().unwrap();
    s
}

fn one_step_model_file(dir: &std::path::Path) {
    let doc = r#"{"S": 1, "A": 1, "s0": 0, "transitions": [[[0.0, 1.0]]],
        "costs": [[{"kind": "deterministic", "mean": 0.4}]]}"#;
    fs::write(dir.join("one_step.json"), doc).unwrap();
}

#[test]
fn zero_regret_environment_sweeps_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    one_step_model_file(dir.path());
    let s = spec(r#"{"env": {"kind": "file", "path": "one_step.json"}, "algorithm": "ebssp",
                     "B": 1.0, "episodes": 400, "seeds": [0, 1, 2]}"#);
    let prepared = Prepared::new(s, Some(dir.path())).unwrap();
    let table = harness::sweep(&prepared, &[100, 200, 400]).unwrap();
    assert!(table.failures.is_empty());
    for row in &table.rows {
        assert!(row.mean_regret.abs() < 1e-6, "{row:?}");
    }
}

#[test]
#[ignore = "unattainable: the loop chain's regret is not positive, so no log-log slope exists"]
fn loop_chain_sweep_slope() {
    let s = spec(r#"{"env": {"kind": "loop_chain", "states": 5, "p_min": 0.2}, "algorithm": "ebssp",
                     "episodes": 4000, "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]}"#);
    let table = harness::sweep(&Prepared::new(s, None).unwrap(), &[1000, 4000]).unwrap();
    let slope = table.slope.expect("positive mean regret");
    assert!((0.3..=0.8).contains(&slope), "{slope}");
}

#[test]
fn doubling_seeds_shrinks_standard_error_by_root_two() {
    let base = r#"{"env": {"kind": "random_ssp", "states": 3, "actions": 2, "goal_prob_floor": 0.2,
                   "cost_low": 0.1, "cost_high": 1.0, "seed": 1}, "algorithm": "ebssp", "episodes": 100, "seeds": SEEDS}"#;
    let se = |n: u64| {
        let seeds: Vec<u64> = (0..n).collect();
        let s = spec(&base.replace("SEEDS", &serde_json::to_string(&seeds).unwrap()));
        let table = harness::sweep(&Prepared::new(s, None).unwrap(), &[100]).unwrap();
        table.rows[0].standard_error
    };
    let ratio = se(200) / se(100);
    let expected = 0.5f64.sqrt();
    assert!((ratio / expected - 1.0).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn oracle_is_shared_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(r#"{"env": {"kind": "random_ssp", "states": 3, "actions": 2, "goal_prob_floor": 0.2,
                     "cost_low": 0.1, "cost_high": 1.0, "seed": 2}, "algorithm": "ebssp", "episodes": 5, "seeds": [4, 9]}"#);
    let report = harness::run_experiment(&s, None, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let v0 = report.summary.v_star_s0;
    let mut seeds_seen = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        seeds_seen.insert(rec[0].to_string());
        let k: f64 = rec[1].parse().unwrap();
        let cum: f64 = rec[2].parse().unwrap();
        let r: f64 = rec[3].parse().unwrap();
        assert!((r - (cum - k * v0)).abs() < 1e-9);
    }
    assert_eq!(seeds_seen.len(), 2);
}
