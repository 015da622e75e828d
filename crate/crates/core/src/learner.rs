//! The episodic learner: greedy play on optimistic Q-values, replanning at
//! doubling visit counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::model::{step, validate_mdp, Action, CostPerturbation, SspMdp, State};
use crate::tables::{QTable, ValueTable};
use crate::visgo::{self, is_trigger, BonusMode, Counters, SkewedModel, VisgoStatus};

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;
pub const DEFAULT_DELTA: f64 = 0.1;

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Bound estimate used in the bonus; should dominate `max{B*, 1}`.
    pub b: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub mode: BonusMode,
    /// Global step budget across all episodes.
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    pub episodes: usize,
    /// Keep the raw `(s, a, c, s')` log.
    #[serde(default)]
    pub record_steps: bool,
}

impl LearnerConfig {
    pub fn new(b: f64, episodes: usize) -> Self {
        Self {
            b,
            eta: 0.0,
            delta: DEFAULT_DELTA,
            mode: BonusMode::Standard,
            step_cap: DEFAULT_STEP_CAP,
            episodes,
            record_steps: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.b >= 1.0 && self.b.is_finite()) {
            return Err(LearnerError::Config(format!("B must be a finite value >= 1, got {}", self.b)));
        }
        check_common(self.eta, self.delta, self.step_cap)
    }
}

pub(crate) fn check_common(eta: f64, delta: f64, step_cap: u64) -> Result<(), LearnerError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(LearnerError::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnerError::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if step_cap == 0 {
        return Err(LearnerError::Config("step cap must be positive".into()));
    }
    Ok(())
}

/// How to pick the cost perturbation from the episode budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EtaRule {
    /// Costs bounded away from zero: no perturbation.
    PositiveCosts,
    /// `K^{-n}` for a constant `n > 1`.
    GeneralUnknownT { n_exponent: f64 },
    /// `(T_bar K)^{-1}` given an upper bound `T_bar` on the optimal hitting time.
    GeneralOrderT { t_bar: f64 },
}

pub fn eta_for_config(rule: EtaRule, episodes: usize) -> Result<f64, LearnerError> {
    if episodes == 0 {
        return Err(LearnerError::Config("need at least one episode".into()));
    }
    let k = episodes as f64;
    match rule {
        EtaRule::PositiveCosts => Ok(0.0),
        EtaRule::GeneralUnknownT { n_exponent } => {
            if !(n_exponent > 1.0 && n_exponent.is_finite()) {
                return Err(LearnerError::Config(format!("exponent must exceed 1, got {n_exponent}")));
            }
            Ok(k.powf(-n_exponent))
        }
        EtaRule::GeneralOrderT { t_bar } => {
            if !(t_bar > 0.0 && t_bar.is_finite()) {
                return Err(LearnerError::Config(format!("T_bar must be positive, got {t_bar}")));
            }
            Ok((1.0 / (t_bar * k)).min(1.0))
        }
    }
}

/// Learner state between steps.
#[derive(Clone, Debug)]
pub struct Learner {
    counters: Counters,
    q: QTable,
    v: ValueTable,
    visgo_calls: u64,
    steps: u64,
    bound: f64,
    delta: f64,
    mode: BonusMode,
    range_limit: Option<f64>,
    last_iterations: usize,
}

impl Learner {
    pub fn new(num_states: usize, num_actions: usize, bound: f64, delta: f64, mode: BonusMode) -> Self {
        Self {
            counters: Counters::new(num_states, num_actions),
            q: QTable::zeros(num_states, num_actions),
            v: ValueTable::zeros(num_states),
            visgo_calls: 0,
            steps: 0,
            bound,
            delta,
            mode,
            range_limit: None,
            last_iterations: 0,
        }
    }

    /// Lowest-index minimizer of the current optimistic Q-values.
    pub fn act(&self, s: State) -> Action {
        self.q.greedy_action(s)
    }

    /// Records a transition whose cost is already perturbed. Replans when the
    /// pair's visit count reaches a power of two and returns the solve status.
    pub fn observe(&mut self, s: State, a: Action, cost: f64, next: usize) -> Result<Option<VisgoStatus>, LearnerError> {
        if self.record(s, a, cost, next)? {
            return self.trigger(s, a).map(Some);
        }
        Ok(None)
    }

    /// First half of [`observe`](Self::observe): updates the counters and
    /// reports whether `(s, a)` just reached a trigger count.
    pub fn record(&mut self, s: State, a: Action, cost: f64, next: usize) -> Result<bool, LearnerError> {
        let n = self.counters.record_step(s, a, cost, next)?;
        self.steps += 1;
        Ok(is_trigger(n))
    }

    /// Second half of [`observe`](Self::observe): snapshot and replan.
    pub fn trigger(&mut self, s: State, a: Action) -> Result<VisgoStatus, LearnerError> {
        self.counters.snapshot(s, a);
        self.replan()
    }

    /// Solves the current skewed model at precision `2^{-j}` after bumping `j`.
    pub fn replan(&mut self) -> Result<VisgoStatus, LearnerError> {
        self.visgo_calls += 1;
        let eps = 0.5_f64.powi(self.visgo_calls.min(1000) as i32);
        let model = SkewedModel::from_counters(&self.counters, self.bound, self.delta, self.mode);
        let out = visgo::solve(&model, eps, self.range_limit)?;
        self.q = out.q;
        self.v = out.v;
        self.last_iterations = out.iterations;
        Ok(out.status)
    }

    pub fn set_bound(&mut self, bound: f64) {
        self.bound = bound;
    }

    pub fn set_range_limit(&mut self, limit: Option<f64>) {
        self.range_limit = limit;
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn v(&self) -> &ValueTable {
        &self.v
    }

    /// Number of value-iteration calls so far (`j`).
    pub fn visgo_calls(&self) -> u64 {
        self.visgo_calls
    }

    /// Global step count (`t`).
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn last_iterations(&self) -> usize {
        self.last_iterations
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    StepCapHit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub cost: f64,
    pub steps: u64,
    /// Value-iteration calls made during the episode.
    pub triggers: u64,
    /// Bound estimate in force when the episode ended.
    pub b_tilde: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub episode: usize,
    pub state: State,
    pub action: Action,
    pub cost: f64,
    pub next: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BTildeCause {
    Initial,
    EpisodeIncrement,
    PhaseDoubling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BTildeChange {
    /// Global step count at the change.
    pub step: u64,
    pub episode: usize,
    pub value: f64,
    pub cause: BTildeCause,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseExit {
    CostHalt,
    RangeHalt,
    RunComplete,
    StepCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    /// Estimate at phase start.
    pub b_tilde: f64,
    pub final_b_tilde: f64,
    pub exit: PhaseExit,
    pub first_episode: usize,
    pub last_episode: usize,
    pub start_state: State,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub status: RunStatus,
    pub total_steps: u64,
    pub visgo_calls: u64,
    pub episodes: Vec<EpisodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepRecord>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b_tilde: Vec<BTildeChange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<PhaseRecord>>,
}

impl RunLog {
    /// Costs of completed episodes, in order.
    pub fn episode_costs(&self) -> Vec<f64> {
        self.episodes.iter().filter(|e| e.completed).map(|e| e.cost).collect()
    }

    pub fn completed_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.completed).count()
    }

    pub fn total_cost(&self) -> f64 {
        self.episodes.iter().map(|e| e.cost).sum()
    }
}

pub(crate) struct Transition {
    pub cost: f64,
    pub next: usize,
    pub trigger: Option<VisgoStatus>,
    /// The halt check fired; any trigger due on this step was skipped.
    pub halted: bool,
}

/// Environment, learner and log for one seeded run.
pub(crate) struct Runner<'m> {
    pub mdp: &'m SspMdp,
    pub learner: Learner,
    pub log: RunLog,
    rng: ChaCha8Rng,
    perturb: CostPerturbation,
    step_cap: u64,
    current: Option<EpisodeRecord>,
}

impl<'m> Runner<'m> {
    pub fn new(
        mdp: &'m SspMdp,
        learner: Learner,
        seed: u64,
        eta: f64,
        step_cap: u64,
        record_steps: bool,
    ) -> Result<Self, LearnerError> {
        let violations = validate_mdp(mdp);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(LearnerError::InvalidModel(text.join("; ")));
        }
        Ok(Self {
            mdp,
            learner,
            log: RunLog {
                status: RunStatus::Completed,
                total_steps: 0,
                visgo_calls: 0,
                episodes: Vec::new(),
                steps: record_steps.then(Vec::new),
                b_tilde: Vec::new(),
                phases: None,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            perturb: CostPerturbation::new(eta)?,
            step_cap,
            current: None,
        })
    }

    /// 1-based index of the episode in progress (or about to start).
    pub fn episode_index(&self) -> usize {
        self.log.episodes.len() + 1
    }

    pub fn begin_episode(&mut self) {
        self.current = Some(EpisodeRecord {
            cost: 0.0,
            steps: 0,
            triggers: 0,
            b_tilde: self.learner.bound(),
            completed: false,
        });
    }

    pub fn replan(&mut self) -> Result<VisgoStatus, LearnerError> {
        let status = self.learner.replan()?;
        if let Some(ep) = self.current.as_mut() {
            ep.triggers += 1;
        }
        Ok(status)
    }

    pub fn in_episode(&self) -> bool {
        self.current.is_some()
    }

    /// Plays the greedy action from `s`. `halt(cost, t)` runs after the
    /// counters are updated and before any replanning; when it returns true
    /// the trigger for this step is skipped. Returns `None` once the step
    /// budget is spent, after closing the current episode as incomplete.
    pub fn step<H: FnOnce(f64, u64) -> bool>(&mut self, s: State, halt: H) -> Result<Option<Transition>, LearnerError> {
        if self.learner.steps() >= self.step_cap {
            self.log.status = RunStatus::StepCapHit;
            self.end_episode(false);
            return Ok(None);
        }
        let a = self.learner.act(s);
        let (cost, next) = step(self.mdp, &mut self.rng, s, a, self.perturb)?;
        let due = self.learner.record(s, a, cost, next)?;
        let episode = self.episode_index();
        let ep = self.current.as_mut().expect("step outside an episode");
        ep.cost += cost;
        ep.steps += 1;
        if let Some(steps) = self.log.steps.as_mut() {
            steps.push(StepRecord { episode, state: s, action: a, cost, next });
        }
        let halted = halt(cost, self.learner.steps() + 1);
        let trigger = if due && !halted {
            ep.triggers += 1;
            Some(self.learner.trigger(s, a)?)
        } else {
            None
        };
        Ok(Some(Transition { cost, next, trigger, halted }))
    }

    pub fn end_episode(&mut self, completed: bool) {
        if let Some(mut ep) = self.current.take() {
            ep.completed = completed;
            ep.b_tilde = self.learner.bound();
            self.log.episodes.push(ep);
        }
    }

    pub fn finish(mut self) -> RunLog {
        self.log.total_steps = self.learner.steps();
        self.log.visgo_calls = self.learner.visgo_calls();
        self.log
    }
}

/// Plays `config.episodes` episodes from the initial state.
pub fn run(config: &LearnerConfig, mdp: &SspMdp, seed: u64) -> Result<RunLog, LearnerError> {
    run_with_observer(config, mdp, seed, |_| {})
}

/// [`run`], calling `observer` after every value-iteration call.
pub fn run_with_observer<F: FnMut(&Learner)>(
    config: &LearnerConfig,
    mdp: &SspMdp,
    seed: u64,
    mut observer: F,
) -> Result<RunLog, LearnerError> {
    config.validate()?;
    let learner = Learner::new(mdp.num_states(), mdp.num_actions(), config.b, config.delta, config.mode);
    let mut runner = Runner::new(mdp, learner, seed, config.eta, config.step_cap, config.record_steps)?;
    let goal = mdp.goal();
    'episodes: for _ in 0..config.episodes {
        runner.begin_episode();
        let mut s = mdp.initial_state();
        loop {
            let Some(tr) = runner.step(s, |_, _| false)? else {
                break 'episodes;
            };
            if tr.trigger.is_some() {
                observer(&runner.learner);
            }
            if tr.next == goal {
                break;
            }
            s = tr.next;
        }
        runner.end_episode(true);
    }
    Ok(runner.finish())
}
