use serde::{Deserialize, Serialize};

use crate::model::{Action, State};

/// Dense state values; the goal is implicit with value 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueTable(Vec<f64>);

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        Self(vec![0.0; num_states])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Value at `s`, with the goal index `S` mapping to 0.
    #[inline]
    pub fn get(&self, s: usize) -> f64 {
        self.0.get(s).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        sup_distance(&self.0, &other.0)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Dense `S x A` table, row-major by state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_vec(num_actions: usize, values: Vec<f64>) -> Self {
        assert!(num_actions > 0 && values.len() % num_actions == 0);
        Self { num_actions, values }
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: State, a: Action) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: State, a: Action, value: f64) {
        self.values[s * self.num_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, s: State) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Lowest-index minimizer of `Q(s, .)`.
    pub fn greedy_action(&self, s: State) -> Action {
        argmin(self.row(s))
    }

    pub fn greedy_policy(&self) -> Vec<Action> {
        (0..self.num_states()).map(|s| self.greedy_action(s)).collect()
    }
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}
