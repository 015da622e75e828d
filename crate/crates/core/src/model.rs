//! Tabular stochastic-shortest-path models.
//!
//! States are indexed `0..S`. The goal is a virtual index `S`: it has no
//! stored row, episodes simply end when a transition lands on it. Every
//! transition row therefore has `S + 1` entries with the goal last.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::ModelError;

pub type State = usize;
pub type Action = usize;

/// Row-sum tolerance for transition rows.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Distribution of the per-step cost of a state-action pair.
///
/// Both kinds have support in `[0, 1]` and expectation `mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostDistribution {
    Deterministic { mean: f64 },
    Bernoulli { mean: f64 },
}

impl CostDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            CostDistribution::Deterministic { mean } | CostDistribution::Bernoulli { mean } => mean,
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CostDistribution::Deterministic { mean } => mean,
            CostDistribution::Bernoulli { mean } => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Lower clamp applied to every observed cost: `max{sample, eta}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostPerturbation {
    eta: f64,
}

impl CostPerturbation {
    pub fn new(eta: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(ModelError::InvalidParameter(format!(
                "cost perturbation must lie in [0, 1], got {eta}"
            )));
        }
        Ok(Self { eta })
    }

    pub fn none() -> Self {
        Self { eta: 0.0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    pub fn apply(&self, cost: f64) -> f64 {
        cost.max(self.eta)
    }
}

/// Ground-truth SSP model with dense transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SspMdp {
    num_states: usize,
    num_actions: usize,
    initial_state: State,
    /// `S * A * (S + 1)` row-major, goal last in each row.
    transitions: Vec<f64>,
    /// `S * A` row-major.
    costs: Vec<CostDistribution>,
}

/// An invariant violation reported by [`validate_mdp`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    RowSum { state: State, action: Action, sum: f64 },
    ProbabilityOutOfRange { state: State, action: Action, next: usize, value: f64 },
    CostOutOfRange { state: State, action: Action, mean: f64 },
    InitialStateOutOfRange { initial_state: State, num_states: usize },
    /// No policy reaches the goal almost surely from these states.
    NoProperPolicy { states: Vec<State> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "row ({state}, {action}) sums to {sum}")
            }
            Violation::ProbabilityOutOfRange { state, action, next, value } => {
                write!(f, "P({next} | {state}, {action}) = {value} is outside [0, 1]")
            }
            Violation::CostOutOfRange { state, action, mean } => {
                write!(f, "cost mean of ({state}, {action}) = {mean} is outside [0, 1]")
            }
            Violation::InitialStateOutOfRange { initial_state, num_states } => {
                write!(f, "initial state {initial_state} is not below S = {num_states}")
            }
            Violation::NoProperPolicy { states } => {
                write!(f, "goal is not reachable almost surely from states {states:?}")
            }
        }
    }
}

impl SspMdp {
    /// Builds a model from flat row-major arrays. Only the shape is checked
    /// here; use [`validate_mdp`] for the probabilistic invariants.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        initial_state: State,
        transitions: Vec<f64>,
        costs: Vec<CostDistribution>,
    ) -> Result<Self, ModelError> {
        if num_states == 0 || num_actions == 0 {
            return Err(ModelError::Shape("S and A must be positive".into()));
        }
        let rows = num_states * num_actions;
        if transitions.len() != rows * (num_states + 1) {
            return Err(ModelError::Shape(format!(
                "expected {} transition entries, got {}",
                rows * (num_states + 1),
                transitions.len()
            )));
        }
        if costs.len() != rows {
            return Err(ModelError::Shape(format!(
                "expected {rows} cost entries, got {}",
                costs.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            initial_state,
            transitions,
            costs,
        })
    }

    /// Builds a model from nested `[s][a][s']` rows and `[s][a]` costs.
    pub fn from_nested(
        initial_state: State,
        transitions: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<CostDistribution>>,
    ) -> Result<Self, ModelError> {
        let num_states = transitions.len();
        let num_actions = transitions.first().map_or(0, Vec::len);
        if costs.len() != num_states {
            return Err(ModelError::Shape(format!(
                "costs has {} state rows, transitions has {num_states}",
                costs.len()
            )));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions * (num_states + 1));
        for (s, by_action) in transitions.into_iter().enumerate() {
            if by_action.len() != num_actions {
                return Err(ModelError::Shape(format!(
                    "state {s} has {} actions, expected {num_actions}",
                    by_action.len()
                )));
            }
            for (a, row) in by_action.into_iter().enumerate() {
                if row.len() != num_states + 1 {
                    return Err(ModelError::Shape(format!(
                        "row ({s}, {a}) has {} entries, expected S + 1 = {}",
                        row.len(),
                        num_states + 1
                    )));
                }
                flat.extend(row);
            }
        }
        let mut flat_costs = Vec::with_capacity(num_states * num_actions);
        for (s, row) in costs.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(ModelError::Shape(format!(
                    "cost row {s} has {} actions, expected {num_actions}",
                    row.len()
                )));
            }
            flat_costs.extend(row);
        }
        Self::new(num_states, num_actions, initial_state, flat, flat_costs)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// The virtual goal index, equal to `S`.
    #[inline]
    pub fn goal(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn initial_state(&self) -> State {
        self.initial_state
    }

    /// Transition row `P(. | s, a)` of length `S + 1`.
    #[inline]
    pub fn row(&self, s: State, a: Action) -> &[f64] {
        let width = self.num_states + 1;
        let start = (s * self.num_actions + a) * width;
        &self.transitions[start..start + width]
    }

    #[inline]
    pub fn cost(&self, s: State, a: Action) -> &CostDistribution {
        &self.costs[s * self.num_actions + a]
    }

    #[inline]
    pub fn mean_cost(&self, s: State, a: Action) -> f64 {
        self.cost(s, a).mean()
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn costs(&self) -> &[CostDistribution] {
        &self.costs
    }

    pub fn to_document(&self) -> MdpDocument {
        let transitions = (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect();
        let costs = (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| *self.cost(s, a)).collect())
            .collect();
        MdpDocument {
            num_states: self.num_states,
            num_actions: self.num_actions,
            initial_state: self.initial_state,
            transitions,
            costs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.into_mdp()
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// On-disk JSON form of an [`SspMdp`].
///
/// `transitions[s][a]` has `S + 1` entries with the goal last;
/// `costs[s][a]` is a `{kind, mean}` object.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "s0")]
    pub initial_state: State,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub costs: Vec<Vec<CostDistribution>>,
}

impl MdpDocument {
    pub fn into_mdp(self) -> Result<SspMdp, ModelError> {
        let mdp = SspMdp::from_nested(self.initial_state, self.transitions, self.costs)?;
        if mdp.num_states != self.num_states || mdp.num_actions != self.num_actions {
            return Err(ModelError::Shape(format!(
                "declared S = {}, A = {} but arrays have S = {}, A = {}",
                self.num_states, self.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(mdp)
    }
}

/// Returns every invariant violation of `mdp`; an empty list means valid.
pub fn validate_mdp(mdp: &SspMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if mdp.initial_state >= mdp.num_states {
        out.push(Violation::InitialStateOutOfRange {
            initial_state: mdp.initial_state,
            num_states: mdp.num_states,
        });
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let row = mdp.row(s, a);
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::ProbabilityOutOfRange { state: s, action: a, next, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                out.push(Violation::RowSum { state: s, action: a, sum });
            }
            let mean = mdp.mean_cost(s, a);
            if !(0.0..=1.0).contains(&mean) {
                out.push(Violation::CostOutOfRange { state: s, action: a, mean });
            }
        }
    }
    let stranded = states_without_proper_policy(mdp);
    if !stranded.is_empty() {
        out.push(Violation::NoProperPolicy { states: stranded });
    }
    out
}

/// States from which no policy reaches the goal with probability one.
///
/// Standard almost-sure reachability fixpoint: keep only actions whose
/// support stays inside the candidate set, then keep only states that can
/// still reach the goal through those actions.
pub fn states_without_proper_policy(mdp: &SspMdp) -> Vec<State> {
    let n = mdp.num_states;
    let goal = mdp.goal();
    let mut candidate = vec![true; n];
    loop {
        let safe = |s: State, a: Action, cand: &[bool]| {
            mdp.row(s, a)
                .iter()
                .enumerate()
                .all(|(next, &p)| p <= 0.0 || next == goal || cand[next])
        };
        // Backward search from the goal over safe actions.
        let mut reach = vec![false; n];
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..n {
                if !candidate[s] || reach[s] {
                    continue;
                }
                let hits = (0..mdp.num_actions).any(|a| {
                    safe(s, a, &candidate)
                        && mdp
                            .row(s, a)
                            .iter()
                            .enumerate()
                            .any(|(next, &p)| p > 0.0 && (next == goal || reach[next]))
                });
                if hits {
                    reach[s] = true;
                    changed = true;
                }
            }
        }
        if reach == candidate {
            break;
        }
        candidate = reach;
    }
    (0..n).filter(|&s| !candidate[s]).collect()
}

/// Samples one transition: returns `(perturbed cost, next state)` where the
/// next state may be the goal index `S`.
pub fn step<R: RngCore + ?Sized>(
    mdp: &SspMdp,
    rng: &mut R,
    s: State,
    a: Action,
    perturb: CostPerturbation,
) -> Result<(f64, usize), ModelError> {
    if s == mdp.goal() {
        return Err(ModelError::StepFromGoal);
    }
    if s > mdp.goal() {
        return Err(ModelError::InvalidState(s));
    }
    if a >= mdp.num_actions {
        return Err(ModelError::InvalidAction(a));
    }
    let cost = perturb.apply(mdp.cost(s, a).sample(rng));
    let row = mdp.row(s, a);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut next = mdp.goal();
    for (idx, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            next = idx;
            break;
        }
    }
    // Round-off can leave u >= acc; fall back to the last positive entry.
    if u >= acc {
        next = row.iter().rposition(|&p| p > 0.0).unwrap_or(mdp.goal());
    }
    Ok((cost, next))
}

/// The toy chain where expected cost-to-go and expected time-to-goal come
/// apart.
///
/// Indexing: `0` is the start state, `1..=S-2` form the zero-cost loop
/// `0 -> 1 -> ... -> S-2 -> 0`, and `S-1` is the exit state that moves to the
/// goal at cost 1. From the start state the exit is taken with probability
/// `p_min`, the loop otherwise. Single action.
pub fn make_loop_chain(num_states: usize, p_min: f64) -> Result<SspMdp, ModelError> {
    make_loop_chain_with_decoys(num_states, p_min, 1)
}

/// [`make_loop_chain`] with `num_actions - 1` extra decoy actions per state.
///
/// Every decoy costs 1 and lands on the goal or back at the start with equal
/// probability, so its optimal Q-value is `1 + V*(start) / 2 = 1.5` against
/// an optimal value of 1. The optimal policy is still the chain action and
/// the optimal value from the start is still 1.
pub fn make_loop_chain_with_decoys(
    num_states: usize,
    p_min: f64,
    num_actions: usize,
) -> Result<SspMdp, ModelError> {
    if num_states < 3 {
        return Err(ModelError::InvalidParameter(format!(
            "loop chain needs S >= 3, got {num_states}"
        )));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "p_min must lie in (0, 1], got {p_min}"
        )));
    }
    if num_actions == 0 {
        return Err(ModelError::InvalidParameter("need at least one action".into()));
    }
    let width = num_states + 1;
    let goal = num_states;
    let exit = num_states - 1;
    let last_loop = num_states - 2;
    let mut transitions = vec![0.0; num_states * num_actions * width];
    let mut costs = vec![CostDistribution::Deterministic { mean: 0.0 }; num_states * num_actions];
    for s in 0..num_states {
        for a in 0..num_actions {
            let base = (s * num_actions + a) * width;
            let row = &mut transitions[base..base + width];
            if a > 0 {
                row[goal] = 0.5;
                row[0] = 0.5;
                costs[s * num_actions + a] = CostDistribution::Deterministic { mean: 1.0 };
                continue;
            }
            if s == 0 {
                row[exit] = p_min;
                row[1] += 1.0 - p_min;
            } else if s == exit {
                row[goal] = 1.0;
                costs[s * num_actions + a] = CostDistribution::Deterministic { mean: 1.0 };
            } else if s == last_loop {
                row[0] = 1.0;
            } else {
                row[s + 1] = 1.0;
            }
        }
    }
    SspMdp::new(num_states, num_actions, 0, transitions, costs)
}

/// Random dense SSP in which every policy is proper.
///
/// Each row is a normalized vector of uniform draws over `S + 1` outcomes,
/// mixed with the goal so that `P(g | s, a) >= goal_prob_floor`. Cost means
/// are uniform in `[cost_low, cost_high]` and deterministic.
pub fn make_random_ssp(
    num_states: usize,
    num_actions: usize,
    goal_prob_floor: f64,
    cost_low: f64,
    cost_high: f64,
    seed: u64,
) -> Result<SspMdp, ModelError> {
    if num_states == 0 || num_actions == 0 {
        return Err(ModelError::InvalidParameter("S and A must be positive".into()));
    }
    if !(goal_prob_floor > 0.0 && goal_prob_floor <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "goal_prob_floor must lie in (0, 1], got {goal_prob_floor}"
        )));
    }
    if !(0.0 <= cost_low && cost_low <= cost_high && cost_high <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "need 0 <= cost_low <= cost_high <= 1, got [{cost_low}, {cost_high}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = num_states + 1;
    let goal = num_states;
    let mut transitions = Vec::with_capacity(num_states * num_actions * width);
    let mut costs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states * num_actions {
        let draws: Vec<f64> = (0..width).map(|_| rng.random::<f64>()).collect();
        let total: f64 = draws.iter().sum();
        let mut row: Vec<f64> = draws
            .iter()
            .map(|&d| (1.0 - goal_prob_floor) * d / total)
            .collect();
        let non_goal: f64 = row[..goal].iter().sum();
        row[goal] = 1.0 - non_goal;
        transitions.extend(row);
        let mean = cost_low + (cost_high - cost_low) * rng.random::<f64>();
        costs.push(CostDistribution::Deterministic { mean });
    }
    SspMdp::new(num_states, num_actions, 0, transitions, costs)
}
