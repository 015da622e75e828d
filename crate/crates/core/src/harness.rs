//! Seeded batch experiments.
//!
//! An [`ExperimentSpec`] names an environment, an algorithm and its settings,
//! and a list of seeds. [`run_experiment`] solves the environment exactly once,
//! runs every seed (in parallel, capped by `SSP_THREADS`) and writes
//!
//! - `regret.csv`: `seed,episode,cum_cost,cum_regret,steps,B_tilde`
//! - `summary.json`: mean and spread of the final regret, phase counts and failures
//! - `plotdata.csv`: `episode,mean_regret,std_regret,seeds`
//! - `runs.jsonl`: one full run log per seed
//!
//! Every file is a pure function of the experiment description and its seeds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, LearnerError};
use crate::learner::{self, eta_for_config, EtaRule, LearnerConfig, RunLog, RunStatus, DEFAULT_DELTA, DEFAULT_STEP_CAP};
use crate::model::{make_loop_chain_with_decoys, make_random_ssp, validate_mdp, SspMdp};
use crate::oracle::{empirical_regret, optimal_values, OptimalSolution, DEFAULT_ETA, DEFAULT_TOL};
use crate::param_free::{run_parameter_free, ParamFreeConfig, DEFAULT_X};
use crate::visgo::BonusMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    LoopChain {
        states: usize,
        p_min: f64,
        #[serde(default = "one")]
        actions: usize,
    },
    RandomSsp {
        states: usize,
        actions: usize,
        goal_prob_floor: f64,
        cost_low: f64,
        cost_high: f64,
        seed: u64,
    },
    /// Model JSON; relative paths resolve against the experiment file's directory.
    File { path: PathBuf },
}

fn one() -> usize {
    1
}

impl EnvSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<SspMdp, HarnessError> {
        Ok(match self {
            EnvSpec::LoopChain { states, p_min, actions } => make_loop_chain_with_decoys(*states, *p_min, *actions)?,
            EnvSpec::RandomSsp {
                states,
                actions,
                goal_prob_floor,
                cost_low,
                cost_high,
                seed,
            } => make_random_ssp(*states, *actions, *goal_prob_floor, *cost_low, *cost_high, *seed)?,
            EnvSpec::File { path } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                SspMdp::load(&full)?
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Ebssp,
    ParameterFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    /// Take the value from the exact solution of the environment.
    Oracle,
}

/// Bound estimate: a number, or `"oracle"` for `max{B*, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Value(f64),
    Keyword(Keyword),
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec::Keyword(Keyword::Oracle)
    }
}

/// `T_bar`: a number, or `"oracle"` for the optimal policy's `T*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TBarSpec {
    Value(f64),
    Keyword(Keyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaRuleSpec {
    PositiveCosts,
    GeneralUnknownT { n_exponent: f64 },
    GeneralOrderT { t_bar: TBarSpec },
}

/// Cost perturbation: a number or a rule evaluated at the episode budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Value(f64),
    Rule(EtaRuleSpec),
}

impl Default for EtaSpec {
    fn default() -> Self {
        EtaSpec::Value(0.0)
    }
}

impl EtaSpec {
    fn depends_on_episodes(&self) -> bool {
        matches!(self, EtaSpec::Rule(EtaRuleSpec::GeneralUnknownT { .. } | EtaRuleSpec::GeneralOrderT { .. }))
    }
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}
fn default_x() -> f64 {
    DEFAULT_X
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_eta_oracle() -> f64 {
    DEFAULT_ETA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub env: EnvSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Ignored by the parameter-free algorithm.
    #[serde(rename = "B", alias = "b", default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub eta: EtaSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub mode: BonusMode,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default = "default_x")]
    pub x: f64,
    #[serde(default = "default_tol")]
    pub oracle_tol: f64,
    #[serde(default = "default_eta_oracle")]
    pub eta_oracle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Spec(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if !(self.oracle_tol > 0.0) {
            return bad(format!("oracle_tol must be positive, got {}", self.oracle_tol));
        }
        if !(0.0..=1.0).contains(&self.eta_oracle) {
            return bad(format!("eta_oracle must lie in [0, 1], got {}", self.eta_oracle));
        }
        if let BoundSpec::Value(b) = self.bound {
            if !(b >= 1.0 && b.is_finite()) {
                return bad(format!("B must be a finite value >= 1, got {b}"));
            }
        }
        if let EtaSpec::Value(eta) = self.eta {
            if !(0.0..=1.0).contains(&eta) {
                return bad(format!("eta must lie in [0, 1], got {eta}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.x > 0.0 && self.x.is_finite()) {
            return bad(format!("x must be positive, got {}", self.x));
        }
        if self.step_cap == 0 {
            return bad("step_cap must be positive".into());
        }
        Ok(())
    }
}

/// A validated spec with its environment built and solved.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: ExperimentSpec,
    pub mdp: SspMdp,
    pub oracle: OptimalSolution,
}

impl Prepared {
    pub fn new(spec: ExperimentSpec, base_dir: Option<&Path>) -> Result<Self, HarnessError> {
        spec.validate()?;
        let mdp = spec.env.build(base_dir)?;
        let violations = validate_mdp(&mdp);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(HarnessError::Spec(format!("environment is not valid: {}", text.join("; "))));
        }
        let oracle = optimal_values(&mdp, spec.oracle_tol, spec.eta_oracle)?;
        Ok(Self { spec, mdp, oracle })
    }

    pub fn v_star_s0(&self) -> f64 {
        self.oracle.value(self.mdp.initial_state())
    }

    /// Bound handed to the known-bound learner.
    pub fn bound(&self) -> f64 {
        match self.spec.bound {
            BoundSpec::Value(b) => b,
            BoundSpec::Keyword(Keyword::Oracle) => self.oracle.b_star.max(1.0),
        }
    }

    pub fn eta(&self, episodes: usize) -> Result<f64, HarnessError> {
        let rule = match self.spec.eta {
            EtaSpec::Value(eta) => return Ok(eta),
            EtaSpec::Rule(EtaRuleSpec::PositiveCosts) => EtaRule::PositiveCosts,
            EtaSpec::Rule(EtaRuleSpec::GeneralUnknownT { n_exponent }) => EtaRule::GeneralUnknownT { n_exponent },
            EtaSpec::Rule(EtaRuleSpec::GeneralOrderT { t_bar }) => EtaRule::GeneralOrderT {
                t_bar: match t_bar {
                    TBarSpec::Value(t) => t,
                    TBarSpec::Keyword(Keyword::Oracle) => self.oracle.t_star,
                },
            },
        };
        eta_for_config(rule, episodes).map_err(|e| HarnessError::Spec(e.to_string()))
    }

    /// One seeded run of `episodes` episodes.
    pub fn run_seed(&self, seed: u64, episodes: usize) -> Result<RunLog, LearnerError> {
        let spec = &self.spec;
        let eta = self.eta(episodes).map_err(|e| LearnerError::Config(e.to_string()))?;
        match spec.algorithm {
            Algorithm::Ebssp => {
                let cfg = LearnerConfig {
                    b: self.bound(),
                    eta,
                    delta: spec.delta,
                    mode: spec.mode,
                    step_cap: spec.step_cap,
                    episodes,
                    record_steps: false,
                };
                learner::run(&cfg, &self.mdp, seed)
            }
            Algorithm::ParameterFree => {
                let cfg = ParamFreeConfig {
                    episodes,
                    delta: spec.delta,
                    x: spec.x,
                    eta,
                    mode: spec.mode,
                    step_cap: spec.step_cap,
                    record_steps: false,
                };
                run_parameter_free(&cfg, &self.mdp, seed)
            }
        }
    }

    /// Runs every seed; results keep the listed seed order.
    pub fn run_all(&self, episodes: usize) -> Vec<SeedResult> {
        let work = |&seed: &u64| {
            let outcome = match self.run_seed(seed, episodes) {
                Ok(log) if log.status == RunStatus::StepCapHit => {
                    Err(format!("step cap of {} hit after {} episodes", self.spec.step_cap, log.completed_episodes()))
                }
                Ok(log) => Ok(log),
                Err(e) => Err(e.to_string()),
            };
            SeedResult { seed, outcome }
        };
        match thread_pool() {
            Some(pool) => pool.install(|| self.spec.seeds.par_iter().map(work).collect()),
            None => self.spec.seeds.par_iter().map(work).collect(),
        }
    }
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var("SSP_THREADS").ok()?.trim().parse().ok()?;
    if n == 0 {
        return None;
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: Result<RunLog, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    pub fn standard_error(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub per_seed: Vec<usize>,
    pub mean: f64,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub v_star_s0: f64,
    pub b_star: f64,
    pub t_star: f64,
    /// Bound given to the known-bound learner.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub eta: f64,
    pub completed_seeds: Vec<u64>,
    pub final_regret: Stats,
    pub final_regret_per_seed: Vec<f64>,
    pub final_regret_over_sqrt_k: Stats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_counts: Option<PhaseCounts>,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub results: Vec<SeedResult>,
    pub out_dir: PathBuf,
}

/// Formats with 12 significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.starts_with("-") && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn regret_rows(log: &RunLog, v_star_s0: f64) -> impl Iterator<Item = (usize, f64, f64, u64, f64)> + '_ {
    let regret = empirical_regret(&log.episode_costs(), v_star_s0);
    let mut cum = 0.0;
    log.episodes
        .iter()
        .filter(|e| e.completed)
        .zip(regret)
        .enumerate()
        .map(move |(i, (ep, r))| {
            cum += ep.cost;
            (i + 1, cum, r, ep.steps, ep.b_tilde)
        })
}

/// Runs a spec end to end and writes its files into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, base_dir: Option<&Path>, out_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let prepared = Prepared::new(spec.clone(), base_dir)?;
    let episodes = spec.episodes;
    let eta = prepared.eta(episodes)?;
    let results = prepared.run_all(episodes);
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let v0 = prepared.v_star_s0();

    let regret_path = out_dir.join("regret.csv");
    let mut w = csv::Writer::from_path(&regret_path)?;
    w.write_record(["seed", "episode", "cum_cost", "cum_regret", "steps", "B_tilde"])?;
    for res in &results {
        if let Ok(log) = &res.outcome {
            for (k, cum, r, steps, b) in regret_rows(log, v0) {
                w.write_record([res.seed.to_string(), k.to_string(), fmt_sig(cum), fmt_sig(r), steps.to_string(), fmt_sig(b)])?;
            }
        }
    }
    w.flush().map_err(io_err(&regret_path))?;

    let completed: Vec<(u64, Vec<f64>)> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|log| (r.seed, empirical_regret(&log.episode_costs(), v0))))
        .collect();

    let plot_path = out_dir.join("plotdata.csv");
    let mut w = csv::Writer::from_path(&plot_path)?;
    w.write_record(["episode", "mean_regret", "std_regret", "seeds"])?;
    for k in 0..episodes {
        let values: Vec<f64> = completed.iter().filter_map(|(_, r)| r.get(k).copied()).collect();
        if values.is_empty() {
            break;
        }
        let st = Stats::of(&values);
        w.write_record([(k + 1).to_string(), fmt_sig(st.mean), fmt_sig(st.std), values.len().to_string()])?;
    }
    w.flush().map_err(io_err(&plot_path))?;

    let finals: Vec<f64> = completed.iter().map(|(_, r)| *r.last().unwrap_or(&0.0)).collect();
    let scaled: Vec<f64> = finals.iter().map(|r| r / (episodes as f64).sqrt()).collect();
    let phase_counts = (spec.algorithm == Algorithm::ParameterFree).then(|| {
        let per_seed: Vec<usize> = results
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .map(|log| log.phases.as_ref().map_or(0, Vec::len))
            .collect();
        let mean = per_seed.iter().sum::<usize>() as f64 / per_seed.len().max(1) as f64;
        let max = per_seed.iter().copied().max().unwrap_or(0);
        PhaseCounts { per_seed, mean, max }
    });
    let summary = Summary {
        algorithm: spec.algorithm,
        episodes,
        seeds: spec.seeds.clone(),
        v_star_s0: v0,
        b_star: prepared.oracle.b_star,
        t_star: prepared.oracle.t_star,
        bound: (spec.algorithm == Algorithm::Ebssp).then(|| prepared.bound()),
        eta,
        completed_seeds: completed.iter().map(|(s, _)| *s).collect(),
        final_regret: Stats::of(&finals),
        final_regret_per_seed: finals,
        final_regret_over_sqrt_k: Stats::of(&scaled),
        phase_counts,
        failures: results
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| Failure { seed: r.seed, error: e.clone() }))
            .collect(),
    };
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n").map_err(io_err(&summary_path))?;

    let runs_path = out_dir.join("runs.jsonl");
    let mut f = fs::File::create(&runs_path).map_err(io_err(&runs_path))?;
    for res in &results {
        let line = match &res.outcome {
            Ok(log) => serde_json::json!({ "seed": res.seed, "log": log }),
            Err(e) => serde_json::json!({ "seed": res.seed, "error": e }),
        };
        writeln!(f, "{line}").map_err(io_err(&runs_path))?;
    }

    Ok(ExperimentReport {
        summary,
        results,
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub standard_error: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln(mean R_K)` on `ln K`; absent when some mean
    /// regret is not positive or fewer than two points exist.
    pub slope: Option<f64>,
    pub failures: Vec<Failure>,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Mean final regret for each episode budget in `k_grid` and the fitted
/// log-log slope.
///
/// When the perturbation does not depend on the budget, each seed runs once
/// at the largest budget and smaller budgets read the regret prefix: play up
/// to episode `k` does not depend on how many episodes follow.
pub fn sweep(prepared: &Prepared, k_grid: &[usize]) -> Result<SweepTable, HarnessError> {
    if k_grid.is_empty() || k_grid.windows(2).any(|w| w[0] >= w[1]) || k_grid[0] == 0 {
        return Err(HarnessError::Spec("K grid must be positive and strictly ascending".into()));
    }
    let v0 = prepared.v_star_s0();
    let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); k_grid.len()];
    let mut failures = Vec::new();
    let mut record = |results: Vec<SeedResult>, targets: &[usize]| {
        for res in results {
            match res.outcome {
                Ok(log) => {
                    let regret = empirical_regret(&log.episode_costs(), v0);
                    for &i in targets {
                        per_k[i].push(regret[k_grid[i] - 1]);
                    }
                }
                Err(error) => failures.push(Failure { seed: res.seed, error }),
            }
        }
    };
    if prepared.spec.eta.depends_on_episodes() {
        for (i, &k) in k_grid.iter().enumerate() {
            record(prepared.run_all(k), &[i]);
        }
    } else {
        let all: Vec<usize> = (0..k_grid.len()).collect();
        record(prepared.run_all(*k_grid.last().unwrap()), &all);
    }
    let rows: Vec<SweepRow> = k_grid
        .iter()
        .zip(&per_k)
        .map(|(&k, values)| {
            let st = Stats::of(values);
            SweepRow {
                episodes: k,
                mean_regret: st.mean,
                std_regret: st.std,
                standard_error: st.standard_error(values.len()),
                seeds: values.len(),
            }
        })
        .collect();
    let slope = if rows.iter().all(|r| r.mean_regret > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| (r.episodes as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mean_regret.ln()).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    Ok(SweepTable { rows, slope, failures })
}

/// Writes `sweep.csv` and `sweep.json` into `out_dir`.
pub fn write_sweep(table: &SweepTable, out_dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["episodes", "mean_regret", "std_regret", "standard_error", "seeds"])?;
    for r in &table.rows {
        w.write_record([
            r.episodes.to_string(),
            fmt_sig(r.mean_regret),
            fmt_sig(r.std_regret),
            fmt_sig(r.standard_error),
            r.seeds.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = out_dir.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(table)? + "\n").map_err(io_err(&path))?;
    Ok(())
}
