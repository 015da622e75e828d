//! Value iteration with slight goal optimism.
//!
//! The learner keeps [`Counters`]; at each trigger it freezes them into a
//! [`SkewedModel`] and iterates the optimistic operator from `V = 0` until the
//! sup-norm change drops below the requested precision.
//!
//! The operator, for one state-action pair, is
//!
//! ```text
//! Q(s,a) = max{ c_hat + P~ V - b(V, s, a), 0 },    V'(s) = min_a Q(s,a)
//! b(V,s,a) = max{ c1 sqrt(Var(P~, V) iota / n+), c2 B iota / n+ }
//!          + c3 sqrt(c_hat iota / n+) + c4 B sqrt(S' iota) / n+
//! ```
//!
//! where `P~` moves `1/(n+1)` of the empirical mass onto the goal. Every
//! policy is proper under `P~`, and the operator is a sup-norm contraction
//! with modulus `1 - nu^2` where `nu = min_{s,a} P~(g | s, a)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{E, SQRT_2};

use crate::error::VisgoError;
use crate::model::{Action, State};
use crate::tables::{sup_distance, QTable, ValueTable};

/// Smallest stopping precision actually used.
///
/// The nominal precision halves at every trigger and drops below what f64
/// iterates near 1 can resolve after ~40 triggers; past that point sweeps can
/// settle into a one-ulp cycle and never meet the test.
pub const PRECISION_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusMode {
    /// `c2 = c1^2 = 36`.
    #[default]
    Standard,
    /// `c2 = c1^2 ln(e / (1 - max_{s,a} max_{s' != g} P~(s'|s,a)))`,
    /// recomputed from the current skewed model; sharpens the contraction
    /// modulus at the price of a log factor in the bonus.
    ContractionScaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonusConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for BonusConstants {
    fn default() -> Self {
        Self {
            c1: 6.0,
            c2: 36.0,
            c3: 2.0 * SQRT_2,
            c4: 2.0 * SQRT_2,
        }
    }
}

/// The learner's sufficient statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counters {
    num_states: usize,
    num_actions: usize,
    /// `N(s, a)`.
    visits: Vec<u64>,
    /// `N(s, a, s')`, goal last.
    transitions: Vec<u64>,
    /// Cost accumulated since the last snapshot of `(s, a)`.
    theta: Vec<f64>,
    /// `n(s, a)`: the visit count at the last snapshot.
    snapshot_visits: Vec<u64>,
    p_hat: Vec<f64>,
    c_hat: Vec<f64>,
}

impl Counters {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        let pairs = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            visits: vec![0; pairs],
            transitions: vec![0; pairs * (num_states + 1)],
            theta: vec![0.0; pairs],
            snapshot_visits: vec![0; pairs],
            p_hat: vec![0.0; pairs * (num_states + 1)],
            c_hat: vec![0.0; pairs],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    fn pair(&self, s: State, a: Action) -> usize {
        s * self.num_actions + a
    }

    /// Adds one observed transition and returns the new `N(s, a)`.
    pub fn record_step(&mut self, s: State, a: Action, cost: f64, next: usize) -> Result<u64, VisgoError> {
        if s >= self.num_states || a >= self.num_actions || next > self.num_states {
            return Err(VisgoError::IndexOutOfRange { state: s, action: a, next });
        }
        if !(0.0..=1.0).contains(&cost) {
            return Err(VisgoError::CostOutOfRange(cost));
        }
        let idx = self.pair(s, a);
        self.visits[idx] += 1;
        self.theta[idx] += cost;
        self.transitions[idx * (self.num_states + 1) + next] += 1;
        Ok(self.visits[idx])
    }

    /// Refreshes the empirical cost and transition row of `(s, a)` and resets
    /// its cost accumulator. Meant to run when `N(s, a)` hits a power of two,
    /// so the accumulator always covers the last `N/2` samples (or 1 at `N = 1`).
    pub fn snapshot(&mut self, s: State, a: Action) {
        let idx = self.pair(s, a);
        let n = self.visits[idx];
        if n == 0 {
            return;
        }
        self.c_hat[idx] = if n >= 2 {
            2.0 * self.theta[idx] / n as f64
        } else {
            self.theta[idx]
        };
        self.theta[idx] = 0.0;
        let width = self.num_states + 1;
        let base = idx * width;
        for k in 0..width {
            self.p_hat[base + k] = self.transitions[base + k] as f64 / n as f64;
        }
        self.snapshot_visits[idx] = n;
    }

    pub fn visits(&self, s: State, a: Action) -> u64 {
        self.visits[self.pair(s, a)]
    }

    pub fn transition_count(&self, s: State, a: Action, next: usize) -> u64 {
        self.transitions[self.pair(s, a) * (self.num_states + 1) + next]
    }

    pub fn theta(&self, s: State, a: Action) -> f64 {
        self.theta[self.pair(s, a)]
    }

    pub fn snapshot_visits(&self, s: State, a: Action) -> u64 {
        self.snapshot_visits[self.pair(s, a)]
    }

    pub fn c_hat(&self, s: State, a: Action) -> f64 {
        self.c_hat[self.pair(s, a)]
    }

    pub fn p_hat_row(&self, s: State, a: Action) -> &[f64] {
        let width = self.num_states + 1;
        let base = self.pair(s, a) * width;
        &self.p_hat[base..base + width]
    }

    pub fn all_visits(&self) -> &[u64] {
        &self.visits
    }
}

/// True for visit counts in the doubling trigger set `{1, 2, 4, 8, ...}`.
#[inline]
pub fn is_trigger(count: u64) -> bool {
    count.is_power_of_two()
}

/// Moves `1/(n+1)` of the mass of an empirical row onto the goal (last entry).
pub fn skew(p_hat_row: &[f64], n: u64) -> Vec<f64> {
    let mut out = vec![0.0; p_hat_row.len()];
    skew_into(p_hat_row, n, &mut out);
    out
}

fn skew_into(p_hat_row: &[f64], n: u64, out: &mut [f64]) {
    let goal = out.len() - 1;
    if n == 0 {
        out.fill(0.0);
        out[goal] = 1.0;
        return;
    }
    let keep = n as f64 / (n as f64 + 1.0);
    for (o, &p) in out.iter_mut().zip(p_hat_row) {
        *o = keep * p;
    }
    out[goal] += 1.0 / (n as f64 + 1.0);
}

/// `p V^2 - (p V)^2` clamped at zero. `p` has `S + 1` entries, `v` has `S`
/// (the goal contributes 0).
pub fn variance(p: &[f64], v: &[f64]) -> f64 {
    let (mean, second) = moments(p, v);
    (second - mean * mean).max(0.0)
}

#[inline]
fn moments(p: &[f64], v: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (&pi, &vi) in p.iter().zip(v) {
        let w = pi * vi;
        mean += w;
        second += w * vi;
    }
    (mean, second)
}

/// Frozen input of one value-iteration call.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewedModel {
    num_states: usize,
    num_actions: usize,
    p_tilde: Vec<f64>,
    c_hat: Vec<f64>,
    n_plus: Vec<f64>,
    iota: Vec<f64>,
    /// Constants in force, with `c2` already rescaled in
    /// [`BonusMode::ContractionScaled`].
    constants: BonusConstants,
    bound: f64,
    delta: f64,
    mode: BonusMode,
}

impl SkewedModel {
    pub fn from_counters(counters: &Counters, bound: f64, delta: f64, mode: BonusMode) -> Self {
        let pairs = counters.num_states * counters.num_actions;
        Self::build(
            counters.num_states,
            counters.num_actions,
            (0..pairs).map(|idx| {
                let width = counters.num_states + 1;
                (
                    &counters.p_hat[idx * width..(idx + 1) * width],
                    counters.snapshot_visits[idx],
                    counters.c_hat[idx],
                )
            }),
            bound,
            delta,
            mode,
        )
    }

    /// Builds a model from explicit empirical rows (`S * A * (S + 1)`),
    /// snapshot counts and empirical costs.
    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        p_hat: &[f64],
        n: &[u64],
        c_hat: &[f64],
        bound: f64,
        delta: f64,
        mode: BonusMode,
    ) -> Self {
        let width = num_states + 1;
        assert_eq!(p_hat.len(), num_states * num_actions * width);
        assert_eq!(n.len(), num_states * num_actions);
        assert_eq!(c_hat.len(), num_states * num_actions);
        Self::build(
            num_states,
            num_actions,
            (0..num_states * num_actions).map(|idx| (&p_hat[idx * width..(idx + 1) * width], n[idx], c_hat[idx])),
            bound,
            delta,
            mode,
        )
    }

    fn build<'a>(
        num_states: usize,
        num_actions: usize,
        rows: impl Iterator<Item = (&'a [f64], u64, f64)>,
        bound: f64,
        delta: f64,
        mode: BonusMode,
    ) -> Self {
        let width = num_states + 1;
        let pairs = num_states * num_actions;
        let log_scale = (12 * num_states * num_actions * width) as f64 / delta;
        let mut p_tilde = vec![0.0; pairs * width];
        let mut c_hat = Vec::with_capacity(pairs);
        let mut n_plus = Vec::with_capacity(pairs);
        let mut iota = Vec::with_capacity(pairs);
        for (idx, (row, n, cost)) in rows.enumerate() {
            skew_into(row, n, &mut p_tilde[idx * width..(idx + 1) * width]);
            let np = n.max(1) as f64;
            c_hat.push(cost);
            n_plus.push(np);
            iota.push((log_scale * np * np).ln());
        }
        let mut constants = BonusConstants::default();
        if mode == BonusMode::ContractionScaled {
            let heaviest = p_tilde
                .chunks_exact(width)
                .flat_map(|row| row[..num_states].iter().copied())
                .fold(0.0_f64, f64::max);
            constants.c2 = constants.c1 * constants.c1 * (E / (1.0 - heaviest)).ln();
        }
        Self {
            num_states,
            num_actions,
            p_tilde,
            c_hat,
            n_plus,
            iota,
            constants,
            bound,
            delta,
            mode,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn mode(&self) -> BonusMode {
        self.mode
    }

    pub fn constants(&self) -> &BonusConstants {
        &self.constants
    }

    #[inline]
    fn pair(&self, s: State, a: Action) -> usize {
        s * self.num_actions + a
    }

    pub fn p_tilde_row(&self, s: State, a: Action) -> &[f64] {
        let width = self.num_states + 1;
        let base = self.pair(s, a) * width;
        &self.p_tilde[base..base + width]
    }

    pub fn c_hat(&self, s: State, a: Action) -> f64 {
        self.c_hat[self.pair(s, a)]
    }

    pub fn n_plus(&self, s: State, a: Action) -> f64 {
        self.n_plus[self.pair(s, a)]
    }

    pub fn iota(&self, s: State, a: Action) -> f64 {
        self.iota[self.pair(s, a)]
    }

    /// `nu = min_{s,a} P~(g | s, a)`.
    pub fn nu(&self) -> f64 {
        let width = self.num_states + 1;
        self.p_tilde
            .chunks_exact(width)
            .map(|row| row[self.num_states])
            .fold(f64::INFINITY, f64::min)
    }

    /// Exploration bonus `b(v, s, a)`.
    pub fn bonus(&self, v: &[f64], s: State, a: Action) -> f64 {
        let var = variance(self.p_tilde_row(s, a), v);
        self.bonus_from_variance(var, s, a)
    }

    #[inline]
    fn bonus_from_variance(&self, var: f64, s: State, a: Action) -> f64 {
        let idx = self.pair(s, a);
        let k = &self.constants;
        let iota = self.iota[idx];
        let np = self.n_plus[idx];
        let width = (self.num_states + 1) as f64;
        let variance_term = k.c1 * (var * iota / np).sqrt();
        let range_term = k.c2 * self.bound * iota / np;
        variance_term.max(range_term)
            + k.c3 * (self.c_hat[idx] * iota / np).sqrt()
            + k.c4 * self.bound * (width * iota).sqrt() / np
    }

    /// `max{c_hat + P~ v - b(v, s, a), 0}`.
    #[inline]
    pub fn q_value(&self, v: &[f64], s: State, a: Action) -> f64 {
        let (mean, second) = moments(self.p_tilde_row(s, a), v);
        let var = (second - mean * mean).max(0.0);
        (self.c_hat[self.pair(s, a)] + mean - self.bonus_from_variance(var, s, a)).max(0.0)
    }
}

/// One synchronous sweep of the optimistic operator. All pairs read the same
/// input `v`.
pub fn apply_operator(model: &SkewedModel, v: &ValueTable) -> (ValueTable, QTable) {
    let mut v_out = ValueTable::zeros(model.num_states);
    let mut q_out = QTable::zeros(model.num_states, model.num_actions);
    apply_operator_into(model, v.as_slice(), v_out.as_mut_slice(), &mut q_out);
    (v_out, q_out)
}

fn apply_operator_into(model: &SkewedModel, v: &[f64], v_out: &mut [f64], q_out: &mut QTable) {
    let na = model.num_actions;
    let q = q_out.as_mut_slice();
    for s in 0..model.num_states {
        let mut best = f64::INFINITY;
        for a in 0..na {
            let value = model.q_value(v, s, a);
            q[s * na + a] = value;
            best = best.min(value);
        }
        v_out[s] = best;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisgoStatus {
    Converged,
    /// An iterate exceeded the range limit; the iterate is still returned.
    RangeExceeded,
}

#[derive(Clone, Debug, Serialize)]
pub struct VisgoOutcome {
    pub status: VisgoStatus,
    pub q: QTable,
    pub v: ValueTable,
    pub iterations: usize,
    /// Requested precision.
    pub eps_vi: f64,
    /// Precision actually tested, `max{eps_vi, PRECISION_FLOOR}`.
    pub eps_used: f64,
    pub nu: f64,
    pub last_change: f64,
}

/// `ceil(ln(max{B, 1} / eps) / nu^2) + 2`.
pub fn iteration_bound(bound: f64, eps: f64, nu: f64) -> usize {
    let sweeps = ((bound.max(1.0) / eps).ln().max(0.0) / (nu * nu)).ceil();
    if sweeps.is_finite() && sweeps < (usize::MAX / 2) as f64 {
        sweeps as usize + 2
    } else {
        usize::MAX
    }
}

/// Iterates the operator from zero until two consecutive iterates are within
/// `eps_vi` in sup-norm, or until an iterate's sup-norm exceeds
/// `range_limit`.
pub fn solve(model: &SkewedModel, eps_vi: f64, range_limit: Option<f64>) -> Result<VisgoOutcome, VisgoError> {
    if !(eps_vi > 0.0) {
        return Err(VisgoError::InvalidPrecision(eps_vi));
    }
    let eps_used = eps_vi.max(PRECISION_FLOOR);
    let nu = model.nu();
    let n = model.num_states;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut q = QTable::zeros(n, model.num_actions);
    let mut iterations = 0;
    let mut bound = usize::MAX;
    loop {
        apply_operator_into(model, &v, &mut next, &mut q);
        iterations += 1;
        let change = sup_distance(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if iterations == 1 {
            // The first change is ||L 0||, which scales the geometric tail.
            let scale = model.bound.max(change);
            bound = iteration_bound(scale, eps_used, nu);
        }
        let status = if range_limit.is_some_and(|limit| v.iter().any(|&x| x > limit)) {
            Some(VisgoStatus::RangeExceeded)
        } else if change <= eps_used {
            Some(VisgoStatus::Converged)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(VisgoOutcome {
                status,
                q,
                v: ValueTable::from_vec(v),
                iterations,
                eps_vi,
                eps_used,
                nu,
                last_change: change,
            });
        }
        if iterations >= bound {
            return Err(VisgoError::ContractionViolation {
                iterations,
                bound,
                nu,
                last_change: change,
            });
        }
    }
}

/// JSON dump of a model and the outcome of solving it, for fixtures.
pub fn dump_json(model: &SkewedModel, outcome: &VisgoOutcome) -> serde_json::Value {
    serde_json::json!({ "model": model, "outcome": outcome })
}
