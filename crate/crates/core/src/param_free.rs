//! Learning without a known bound on the optimal values.
//!
//! The bound estimate `B~` starts at 1. A phase runs the ordinary learner with
//! `B~` in the bonus and stops early if the phase's cumulative cost exceeds
//! [`c_bound`] or if an iterate of value iteration leaves `[0, B~]`. Each early
//! stop doubles `B~` and starts a new phase from the current state, keeping all
//! counters. Independently, at the start of episode `k` the estimate is raised
//! to at least `sqrt(k) / (S^{3/2} A^{1/2})`.

use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::learner::{
    check_common, BTildeCause, BTildeChange, Learner, PhaseExit, PhaseRecord, RunLog, Runner, DEFAULT_DELTA,
    DEFAULT_STEP_CAP,
};
use crate::model::{SspMdp, State};
use crate::visgo::{BonusMode, VisgoStatus};

pub const DEFAULT_X: f64 = 6.0;

fn default_x() -> f64 {
    DEFAULT_X
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFreeConfig {
    pub episodes: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Multiplier of the lower-order terms in the cost threshold.
    #[serde(default = "default_x")]
    pub x: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub mode: BonusMode,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default)]
    pub record_steps: bool,
}

impl ParamFreeConfig {
    pub fn new(episodes: usize) -> Self {
        Self {
            episodes,
            delta: DEFAULT_DELTA,
            x: DEFAULT_X,
            eta: 0.0,
            mode: BonusMode::Standard,
            step_cap: DEFAULT_STEP_CAP,
            record_steps: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.x > 0.0 && self.x.is_finite()) {
            return Err(LearnerError::Config(format!("x must be positive, got {}", self.x)));
        }
        check_common(self.eta, self.delta, self.step_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseState {
    pub b_tilde: f64,
    /// 1-based phase index.
    pub phase: usize,
    /// Cost accumulated in this phase.
    pub cost: f64,
    /// Where play resumes; `None` means a fresh episode from the initial state.
    pub start: Option<State>,
    pub x: f64,
}

/// Cost threshold for episode `k` at time `t`:
/// `k B + 3x (B sqrt(S A k) L + B S^2 A L^2)` with `L = log2(2 B t S A / delta)`.
pub fn c_bound(k: usize, t: u64, b_tilde: f64, num_states: usize, num_actions: usize, delta: f64, x: f64) -> f64 {
    let s = num_states as f64;
    let a = num_actions as f64;
    let k = k as f64;
    let l = (2.0 * b_tilde * t as f64 * s * a / delta).log2();
    k * b_tilde + 3.0 * x * (b_tilde * (s * a * k).sqrt() * l + b_tilde * s * s * a * l * l)
}

/// `max{B, sqrt(k) / (S^{3/2} A^{1/2})}`.
pub fn episode_increment(b_tilde: f64, k: usize, num_states: usize, num_actions: usize) -> f64 {
    let floor = (k as f64).sqrt() / ((num_states as f64).powf(1.5) * (num_actions as f64).sqrt());
    b_tilde.max(floor)
}

fn set_estimate(runner: &mut Runner<'_>, b: f64) {
    runner.learner.set_bound(b);
    runner.learner.set_range_limit(Some(b));
}

/// Runs one phase until it halts or the last episode finishes. Updates
/// `state.start` and `state.b_tilde` in place.
pub(crate) fn run_phase(
    runner: &mut Runner<'_>,
    state: &mut PhaseState,
    config: &ParamFreeConfig,
) -> Result<PhaseExit, LearnerError> {
    let mdp = runner.mdp;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let goal = mdp.goal();
    state.cost = 0.0;
    set_estimate(runner, state.b_tilde);
    if state.phase > 1 && runner.replan()? == VisgoStatus::RangeExceeded {
        return Ok(PhaseExit::RangeHalt);
    }
    loop {
        let s = match state.start {
            Some(s) => s,
            None => {
                let k = runner.episode_index();
                if k > config.episodes {
                    return Ok(PhaseExit::RunComplete);
                }
                runner.begin_episode();
                state.start = Some(mdp.initial_state());
                let raised = episode_increment(state.b_tilde, k, ns, na);
                if raised > state.b_tilde {
                    state.b_tilde = raised;
                    set_estimate(runner, raised);
                    runner.log.b_tilde.push(BTildeChange {
                        step: runner.learner.steps(),
                        episode: k,
                        value: raised,
                        cause: BTildeCause::EpisodeIncrement,
                    });
                    if runner.replan()? == VisgoStatus::RangeExceeded {
                        return Ok(PhaseExit::RangeHalt);
                    }
                }
                mdp.initial_state()
            }
        };
        let k = runner.episode_index();
        let phase_cost = state.cost;
        let b = state.b_tilde;
        let Some(tr) = runner.step(s, |cost, t| phase_cost + cost > c_bound(k, t, b, ns, na, config.delta, config.x))?
        else {
            return Ok(PhaseExit::StepCap);
        };
        state.cost += tr.cost;
        if tr.next == goal {
            runner.end_episode(true);
            state.start = None;
        } else {
            state.start = Some(tr.next);
        }
        if tr.halted {
            return Ok(PhaseExit::CostHalt);
        }
        if tr.trigger == Some(VisgoStatus::RangeExceeded) {
            return Ok(PhaseExit::RangeHalt);
        }
    }
}

/// Plays `config.episodes` episodes without a bound estimate.
pub fn run_parameter_free(config: &ParamFreeConfig, mdp: &SspMdp, seed: u64) -> Result<RunLog, LearnerError> {
    config.validate()?;
    let mut learner = Learner::new(mdp.num_states(), mdp.num_actions(), 1.0, config.delta, config.mode);
    learner.set_range_limit(Some(1.0));
    let mut runner = Runner::new(mdp, learner, seed, config.eta, config.step_cap, config.record_steps)?;
    runner.log.b_tilde.push(BTildeChange {
        step: 0,
        episode: 1,
        value: 1.0,
        cause: BTildeCause::Initial,
    });
    let mut state = PhaseState {
        b_tilde: 1.0,
        phase: 1,
        cost: 0.0,
        start: None,
        x: config.x,
    };
    let mut phases = Vec::new();
    loop {
        let first_episode = runner.episode_index();
        let start_state = state.start.unwrap_or(mdp.initial_state());
        let b_start = state.b_tilde;
        let exit = run_phase(&mut runner, &mut state, config)?;
        let last_episode = if runner.in_episode() {
            runner.episode_index()
        } else {
            runner.episode_index() - 1
        };
        phases.push(PhaseRecord {
            phase: state.phase,
            b_tilde: b_start,
            final_b_tilde: state.b_tilde,
            exit,
            first_episode,
            last_episode,
            start_state,
            cost: state.cost,
        });
        match exit {
            PhaseExit::RunComplete | PhaseExit::StepCap => break,
            PhaseExit::CostHalt | PhaseExit::RangeHalt => {
                state.b_tilde *= 2.0;
                state.phase += 1;
                runner.log.b_tilde.push(BTildeChange {
                    step: runner.learner.steps(),
                    episode: runner.episode_index(),
                    value: state.b_tilde,
                    cause: BTildeCause::PhaseDoubling,
                });
            }
        }
    }
    let mut log = runner.finish();
    log.phases = Some(phases);
    Ok(log)
}
