use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ssp_core::harness::{self, ExperimentSpec, Prepared};
use ssp_core::model::{make_loop_chain_with_decoys, make_random_ssp, validate_mdp, SspMdp};
use ssp_core::oracle::{optimal_values, DEFAULT_ETA, DEFAULT_TOL};

const EXIT_SPEC: u8 = 2;
const EXIT_SEED_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "ssp", version, about = "Stochastic shortest path learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and list every violated invariant.
    Validate { mdp: PathBuf },
    /// Solve a model exactly and print V*, B*, T* and the optimal policy.
    Oracle {
        mdp: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long = "eta-oracle", default_value_t = DEFAULT_ETA)]
        eta_oracle: f64,
    },
    /// Run every seed of an experiment spec.
    Run {
        spec: PathBuf,
        /// Output directory; defaults to the experiment's `output_dir`, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean final regret over a grid of episode budgets.
    Sweep {
        spec: PathBuf,
        #[arg(long = "k-grid", value_delimiter = ',', required = true)]
        k_grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated model as JSON to stdout.
    #[command(subcommand)]
    Generate(Generator),
}

#[derive(Subcommand)]
enum Generator {
    LoopChain {
        #[arg(long)]
        states: usize,
        #[arg(long = "p-min")]
        p_min: f64,
        #[arg(long, default_value_t = 1)]
        actions: usize,
    },
    Random {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long = "goal-prob-floor")]
        goal_prob_floor: f64,
        #[arg(long = "cost-low", default_value_t = 0.0)]
        cost_low: f64,
        #[arg(long = "cost-high", default_value_t = 1.0)]
        cost_high: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn spec_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_SPEC,
        error: error.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { mdp } => validate(&mdp),
        Command::Oracle { mdp, tol, eta_oracle } => oracle(&mdp, tol, eta_oracle),
        Command::Run { spec, out } => run(&spec, out),
        Command::Sweep { spec, k_grid, out } => sweep(&spec, &k_grid, out),
        Command::Generate(g) => generate(g),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_mdp(path: &Path) -> Result<SspMdp, Failure> {
    SspMdp::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(spec_error)
}

fn validate(path: &Path) -> Result<ExitCode, Failure> {
    let mdp = load_mdp(path)?;
    let violations = validate_mdp(&mdp);
    if violations.is_empty() {
        println!("valid: S = {}, A = {}", mdp.num_states(), mdp.num_actions());
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("{v}");
    }
    Ok(ExitCode::from(EXIT_SPEC))
}

fn oracle(path: &Path, tol: f64, eta_oracle: f64) -> Result<ExitCode, Failure> {
    let mdp = load_mdp(path)?;
    let violations = validate_mdp(&mdp);
    if let Some(v) = violations.first() {
        return Err(spec_error(anyhow::anyhow!("{} is not a valid model: {v}", path.display())));
    }
    let sol = optimal_values(&mdp, tol, eta_oracle).map_err(spec_error)?;
    let out = serde_json::json!({
        "v_star": sol.v_star,
        "q_star": (0..mdp.num_states()).map(|s| sol.q_star.row(s).to_vec()).collect::<Vec<_>>(),
        "b_star": sol.b_star,
        "t_star": sol.t_star,
        "pi_star": sol.pi_star,
        "sweeps": sol.sweeps,
        "eta_oracle": sol.eta_oracle,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("plain values serialize"));
    Ok(ExitCode::SUCCESS)
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let spec = ExperimentSpec::load(path)
        .with_context(|| format!("reading spec {}", path.display()))
        .map_err(spec_error)?;
    spec.validate().map_err(spec_error)?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run(path: &Path, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let spec = load_spec(path)?;
    let dir = out_dir(&spec, out);
    let report = harness::run_experiment(&spec, path.parent(), &dir).map_err(|e| Failure {
        code: match e {
            ssp_core::HarnessError::Spec(_) | ssp_core::HarnessError::Model(_) | ssp_core::HarnessError::Oracle(_) => {
                EXIT_SPEC
            }
            _ => 1,
        },
        error: e.into(),
    })?;
    let s = &report.summary;
    println!(
        "{} seeds completed, mean R_K = {:.4} (std {:.4}), wrote {}",
        s.completed_seeds.len(),
        s.final_regret.mean,
        s.final_regret.std,
        dir.display()
    );
    if s.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &s.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    Ok(ExitCode::from(EXIT_SEED_FAILURE))
}

fn sweep(path: &Path, k_grid: &[usize], out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let spec = load_spec(path)?;
    let dir = out_dir(&spec, out);
    let prepared = Prepared::new(spec, path.parent()).map_err(spec_error)?;
    let table = harness::sweep(&prepared, k_grid).map_err(spec_error)?;
    harness::write_sweep(&table, &dir).map_err(|e| Failure { code: 1, error: e.into() })?;
    println!("{:>10} {:>16} {:>14}", "K", "mean R_K", "std err");
    for r in &table.rows {
        println!("{:>10} {:>16.4} {:>14.4}", r.episodes, r.mean_regret, r.standard_error);
    }
    match table.slope {
        Some(slope) => println!("log-log slope: {slope:.4}"),
        None => println!("log-log slope: undefined (non-positive mean regret)"),
    }
    if table.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &table.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    Ok(ExitCode::from(EXIT_SEED_FAILURE))
}

fn generate(g: Generator) -> Result<ExitCode, Failure> {
    let mdp = match g {
        Generator::LoopChain { states, p_min, actions } => make_loop_chain_with_decoys(states, p_min, actions),
        Generator::Random {
            states,
            actions,
            goal_prob_floor,
            cost_low,
            cost_high,
            seed,
        } => make_random_ssp(states, actions, goal_prob_floor, cost_low, cost_high, seed),
    }
    .map_err(spec_error)?;
    println!("{}", mdp.to_json());
    Ok(ExitCode::SUCCESS)
}
