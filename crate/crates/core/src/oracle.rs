//! Exact planning on the true model.
//!
//! Used to measure regret and as an independent reference in tests. Values
//! come from value iteration on the cost-perturbed model `max{c, eta}`; the
//! perturbation keeps zero-cost cycles from stalling iteration from below and
//! biases the result upward by at most `eta * T*`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::OracleError;
use crate::model::{Action, SspMdp, State};
use crate::tables::{argmin, sup_distance, QTable, ValueTable};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_ETA: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 5_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct OptimalSolution {
    pub v_star: ValueTable,
    pub q_star: QTable,
    pub pi_star: Vec<Action>,
    /// `max_s V*(s)`.
    pub b_star: f64,
    /// `max_s T^{pi*}(s)`.
    pub t_star: f64,
    pub sweeps: usize,
    pub eta_oracle: f64,
}

impl OptimalSolution {
    pub fn value(&self, s: State) -> f64 {
        self.v_star.get(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyStats {
    /// Expected cost-to-go; `inf` where the goal is not reached surely.
    pub v_pi: ValueTable,
    /// Expected hitting time of the goal; `inf` likewise.
    pub t_pi: ValueTable,
    pub proper: bool,
}

/// Optimal values, Q-values, greedy policy and the `B*`, `T*` ranges.
pub fn optimal_values(mdp: &SspMdp, tol: f64, eta_oracle: f64) -> Result<OptimalSolution, OracleError> {
    optimal_values_capped(mdp, tol, eta_oracle, DEFAULT_MAX_SWEEPS)
}

pub fn optimal_values_capped(
    mdp: &SspMdp,
    tol: f64,
    eta_oracle: f64,
    max_sweeps: usize,
) -> Result<OptimalSolution, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if !(0.0..=1.0).contains(&eta_oracle) {
        return Err(OracleError::InvalidParameter(format!(
            "eta_oracle must lie in [0, 1], got {eta_oracle}"
        )));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let cost = |s, a| mdp.mean_cost(s, a).max(eta_oracle);

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        if sweeps >= max_sweeps {
            return Err(OracleError::IterationCap(max_sweeps));
        }
        for s in 0..n {
            next[s] = (0..na)
                .map(|a| cost(s, a) + expect(mdp.row(s, a), &v))
                .fold(f64::INFINITY, f64::min);
        }
        sweeps += 1;
        let change = sup_distance(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if change < tol {
            break;
        }
    }

    let mut q = QTable::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            q.set(s, a, cost(s, a) + expect(mdp.row(s, a), &v));
        }
    }
    let pi: Vec<Action> = (0..n).map(|s| argmin(q.row(s))).collect();
    let stats = policy_stats(mdp, &pi)?;
    let b_star = v.iter().copied().fold(0.0, f64::max);
    let t_star = stats.t_pi.as_slice().iter().copied().fold(0.0, f64::max);
    Ok(OptimalSolution {
        v_star: ValueTable::from_vec(v),
        q_star: q,
        pi_star: pi,
        b_star,
        t_star,
        sweeps,
        eta_oracle,
    })
}

/// `sum_{s'} p(s') v(s')` with the goal column contributing 0.
#[inline]
pub(crate) fn expect(row: &[f64], v: &[f64]) -> f64 {
    row[..v.len()].iter().zip(v).map(|(p, x)| p * x).sum()
}

/// Expected cost-to-go and time-to-goal of a stationary deterministic policy
/// under the true mean costs.
pub fn policy_stats(mdp: &SspMdp, pi: &[Action]) -> Result<PolicyStats, OracleError> {
    let n = mdp.num_states();
    if pi.len() != n {
        return Err(OracleError::PolicyShape { expected: n, got: pi.len() });
    }
    if let Some(&a) = pi.iter().find(|&&a| a >= mdp.num_actions()) {
        return Err(OracleError::InvalidParameter(format!("policy uses action {a}")));
    }

    let sure = surely_absorbed(mdp, pi);
    let members: Vec<State> = (0..n).filter(|&s| sure[s]).collect();
    let mut v = vec![f64::INFINITY; n];
    let mut t = vec![f64::INFINITY; n];
    if !members.is_empty() {
        let m = members.len();
        let mut local = vec![usize::MAX; n];
        for (i, &s) in members.iter().enumerate() {
            local[s] = i;
        }
        let mut lhs = DMatrix::<f64>::identity(m, m);
        let mut cost = DVector::<f64>::zeros(m);
        for (i, &s) in members.iter().enumerate() {
            let row = mdp.row(s, pi[s]);
            for (next, &p) in row[..n].iter().enumerate() {
                if p > 0.0 {
                    // Successors of surely-absorbed states are surely absorbed.
                    lhs[(i, local[next])] -= p;
                }
            }
            cost[i] = mdp.mean_cost(s, pi[s]);
        }
        let lu = lhs.lu();
        let values = lu.solve(&cost).ok_or(OracleError::Singular)?;
        let times = lu.solve(&DVector::from_element(m, 1.0)).ok_or(OracleError::Singular)?;
        for (i, &s) in members.iter().enumerate() {
            v[s] = values[i];
            t[s] = times[i];
        }
    }
    Ok(PolicyStats {
        v_pi: ValueTable::from_vec(v),
        t_pi: ValueTable::from_vec(t),
        proper: members.len() == n,
    })
}

/// `sure[s]` iff the chain induced by `pi` hits the goal with probability
/// one from `s`, i.e. every state reachable from `s` can still reach the goal.
fn surely_absorbed(mdp: &SspMdp, pi: &[Action]) -> Vec<bool> {
    let n = mdp.num_states();
    let goal = mdp.goal();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            mdp.row(s, pi[s])
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(next, _)| next)
                .collect()
        })
        .collect();
    let mut pred: Vec<Vec<State>> = vec![Vec::new(); n + 1];
    for (s, nexts) in succ.iter().enumerate() {
        for &next in nexts {
            pred[next].push(s);
        }
    }
    let backward = |seeds: Vec<usize>| {
        let mut mark = vec![false; n + 1];
        let mut stack = seeds;
        for &s in &stack {
            mark[s] = true;
        }
        while let Some(x) = stack.pop() {
            for &p in &pred[x] {
                if !mark[p] {
                    mark[p] = true;
                    stack.push(p);
                }
            }
        }
        mark
    };
    let reaches_goal = backward(vec![goal]);
    let stuck: Vec<usize> = (0..n).filter(|&s| !reaches_goal[s]).collect();
    let reaches_stuck = backward(stuck);
    (0..n).map(|s| !reaches_stuck[s]).collect()
}

/// Cumulative regret after each episode: `R_k = sum_{i<=k} cost_i - k V*(s0)`.
pub fn empirical_regret(episode_costs: &[f64], v_star_s0: f64) -> Vec<f64> {
    let mut total = 0.0;
    episode_costs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            total += c;
            total - (i as f64 + 1.0) * v_star_s0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_loop_chain, make_random_ssp, CostDistribution};

    fn det(mean: f64) -> CostDistribution {
        CostDistribution::Deterministic { mean }
    }

    #[test]
    fn one_step_model() {
        let mdp = SspMdp::from_nested(0, vec![vec![vec![0.0, 1.0]]], vec![vec![det(0.4)]]).unwrap();
        let sol = optimal_values(&mdp, 1e-12, 1e-9).unwrap();
        assert!((sol.value(0) - 0.4).abs() < 1e-12);
        assert!((sol.b_star - 0.4).abs() < 1e-12);
        assert!((sol.t_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loop_chain_value_is_one() {
        for p in [0.5, 0.2, 0.1, 1.0] {
            let mdp = make_loop_chain(5, p).unwrap();
            let sol = optimal_values(&mdp, 1e-12, 0.0).unwrap();
            assert!((sol.value(0) - 1.0).abs() < 1e-9, "p = {p}: {}", sol.value(0));
            let stats = policy_stats(&mdp, &[0; 5]).unwrap();
            assert!((stats.v_pi.get(0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn loop_chain_hitting_time() {
        // Brute force: expected time from s0 = (2p + (1 - p)(S - 1)) / p.
        for (s, p) in [(5usize, 1.0f64), (5, 0.1), (7, 0.3)] {
            let mdp = make_loop_chain(s, p).unwrap();
            let stats = policy_stats(&mdp, &vec![0; s]).unwrap();
            let expected = (2.0 * p + (1.0 - p) * (s as f64 - 1.0)) / p;
            assert!((stats.t_pi.get(0) - expected).abs() < 1e-9, "{s} {p}");
        }
        let p1 = make_loop_chain(5, 1.0).unwrap();
        let sol = optimal_values(&p1, 1e-12, 0.0).unwrap();
        assert!((sol.value(0) - 1.0).abs() < 1e-12);
        let stats = policy_stats(&p1, &sol.pi_star).unwrap();
        assert!((stats.t_pi.get(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_step_chain() {
        let mdp = SspMdp::from_nested(
            0,
            vec![vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
            vec![vec![det(0.5)], vec![det(0.5)]],
        )
        .unwrap();
        let stats = policy_stats(&mdp, &[0, 0]).unwrap();
        assert!(stats.proper);
        assert!((stats.v_pi.get(0) - 1.0).abs() < 1e-12);
        assert!((stats.t_pi.get(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn self_loop_policy_is_improper() {
        let mdp = SspMdp::from_nested(
            0,
            vec![
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            ],
            vec![vec![det(0.0), det(1.0)], vec![det(0.3), det(0.3)]],
        )
        .unwrap();
        let stats = policy_stats(&mdp, &[0, 0]).unwrap();
        assert!(!stats.proper);
        assert!(stats.v_pi.get(0).is_infinite());
        assert!((stats.t_pi.get(1) - 1.0).abs() < 1e-12);
        // With a positive perturbation the oracle avoids the free self-loop.
        let sol = optimal_values(&mdp, 1e-12, 1e-6).unwrap();
        assert_eq!(sol.pi_star, vec![1, 0]);
    }

    #[test]
    fn three_state_against_gaussian_elimination() {
        let (mdp, pi) = hand_mdp();
        let sol = optimal_values(&mdp, 1e-12, 1e-9).unwrap();
        assert_eq!(sol.pi_star, pi);
        let reference = gauss_policy_value(&mdp, &pi);
        for s in 0..3 {
            assert!((sol.value(s) - reference[s]).abs() < 1e-6, "state {s}");
        }
    }

    #[test]
    fn cross_check_on_random_model() {
        let mdp = make_random_ssp(4, 2, 0.1, 0.0, 1.0, 3).unwrap();
        let sol = optimal_values(&mdp, 1e-12, 1e-9).unwrap();
        let stats = policy_stats(&mdp, &sol.pi_star).unwrap();
        assert!(stats.proper);
        for s in 0..4 {
            assert!((stats.v_pi.get(s) - sol.value(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn solution_invariants() {
        for seed in 0..20 {
            let mdp = make_random_ssp(5, 3, 0.05, 0.0, 1.0, seed).unwrap();
            let tol = 1e-10;
            let eta = 1e-9;
            let sol = optimal_values(&mdp, tol, eta).unwrap();
            let v = sol.v_star.as_slice();
            for s in 0..5 {
                let backup = (0..3)
                    .map(|a| mdp.mean_cost(s, a).max(eta) + expect(mdp.row(s, a), v))
                    .fold(f64::INFINITY, f64::min);
                assert!((v[s] - backup).abs() < 10.0 * tol);
                let qmin = sol.q_star.row(s).iter().copied().fold(f64::INFINITY, f64::min);
                assert!((v[s] - qmin).abs() < 10.0 * tol);
            }
            assert!(sol.b_star <= sol.t_star);
            let stats = policy_stats(&mdp, &sol.pi_star).unwrap();
            for s in 0..5 {
                assert!(stats.v_pi.get(s) <= v[s] + eta * stats.t_pi.get(s) + 10.0 * tol);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let mdp = make_loop_chain(3, 0.5).unwrap();
        assert!(optimal_values(&mdp, 0.0, 0.0).is_err());
        assert!(optimal_values(&mdp, 1e-9, 2.0).is_err());
        assert!(matches!(policy_stats(&mdp, &[0]), Err(OracleError::PolicyShape { .. })));
    }

    #[test]
    fn iteration_cap_reported() {
        let mdp = make_loop_chain(5, 0.01).unwrap();
        assert!(matches!(
            optimal_values_capped(&mdp, 1e-12, 0.0, 3),
            Err(OracleError::IterationCap(3))
        ));
    }

    #[test]
    fn regret_prefixes() {
        assert_eq!(empirical_regret(&[1.0, 1.0, 1.0], 1.0), vec![0.0, 0.0, 0.0]);
        assert_eq!(empirical_regret(&[2.0, 2.0], 1.0), vec![1.0, 2.0]);
        assert!(empirical_regret(&[], 1.0).is_empty());
    }

    pub(crate) fn hand_mdp() -> (SspMdp, Vec<Action>) {
        // Action 0 is cheap but slow, action 1 is expensive and direct.
        let mdp = SspMdp::from_nested(
            0,
            vec![
                vec![vec![0.0, 0.7, 0.2, 0.1], vec![0.0, 0.0, 0.0, 1.0]],
                vec![vec![0.1, 0.0, 0.6, 0.3], vec![0.0, 0.0, 0.5, 0.5]],
                vec![vec![0.2, 0.2, 0.0, 0.6], vec![0.0, 0.0, 0.0, 1.0]],
            ],
            vec![
                vec![det(0.2), det(0.9)],
                vec![det(0.3), det(0.1)],
                vec![det(0.4), det(0.8)],
            ],
        )
        .unwrap();
        // Optimal policy found by enumerating all 8 policies in
        // `policy_enumeration_picks_optimum`.
        (mdp, vec![0, 1, 0])
    }

    /// Gaussian elimination with partial pivoting on (I - P_pi) V = c_pi.
    fn gauss_policy_value(mdp: &SspMdp, pi: &[Action]) -> Vec<f64> {
        let n = mdp.num_states();
        let mut m = vec![vec![0.0; n + 1]; n];
        for s in 0..n {
            let row = mdp.row(s, pi[s]);
            for j in 0..n {
                m[s][j] = if s == j { 1.0 } else { 0.0 } - row[j];
            }
            m[s][n] = mdp.mean_cost(s, pi[s]);
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        (0..n).map(|r| m[r][n] / m[r][r]).collect()
    }

    #[test]
    fn policy_enumeration_picks_optimum() {
        let (mdp, pi) = hand_mdp();
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..8 {
            let cand: Vec<Action> = (0..3).map(|s| (code >> s) & 1).collect();
            let v = gauss_policy_value(&mdp, &cand);
            let total: f64 = v.iter().sum();
            if total < best.0 {
                best = (total, cand);
            }
        }
        assert_eq!(best.1, pi);
    }
}
