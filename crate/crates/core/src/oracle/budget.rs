use serde::{Deserialize, Serialize};

use super::mdp::{IndexTransform, TabularMdp};
use super::solver::{value_iteration, QTable};
use crate::error::{Error, Result};

/// Symmetry gaps of one admissible pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub state: usize,
    pub action: usize,
    /// `|R(s,a) - R(gs,ga)|`
    pub reward_gap: f64,
    /// `Σ_{s'} |T(s'|s,a) - T(gs'|gs,ga)|`
    pub transition_l1: f64,
}

/// Estimated `(ε, δ)` of a model under one group element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryBudget {
    pub epsilon_hat: f64,
    /// `V_max · max L1`; dominates the MMD over any function class bounded by `V_max`.
    pub delta_hat: f64,
    pub v_max: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_pair: Vec<PairGap>,
}

/// Worst-case reward and transition asymmetry over admissible pairs.
///
/// The transformed law samples `gs' ~ T(·|gs,ga)` and maps it back with
/// `L_g⁻¹`, so its mass at `s'` is `T(gs'|gs,ga)`.
pub fn estimate_budget(m: &TabularMdp, g: &IndexTransform) -> Result<SymmetryBudget> {
    g.check_fits(m)?;
    let inv = g.inverse();
    let mut scratch = vec![0.0; m.n_states()];
    let mut touched: Vec<usize> = Vec::new();
    let mut per_pair = Vec::new();
    let (mut eps, mut max_l1) = (0.0_f64, 0.0_f64);
    for s in 0..m.n_states() {
        for a in 0..m.n_actions() {
            if !m.is_admissible(s, a) {
                continue;
            }
            let (gs, ga) = (g.state(s), g.action(a));
            if !m.is_admissible(gs, ga) {
                return Err(Error::Transform(format!(
                    "transform maps admissible ({s},{a}) to inadmissible ({gs},{ga})"
                )));
            }
            let reward_gap = (m.reward(s, a) - m.reward(gs, ga)).abs();
            for &(t, p) in m.row(s, a) {
                scratch[t] += p;
                touched.push(t);
            }
            for &(t, p) in m.row(gs, ga) {
                let back = inv.state(t);
                scratch[back] -= p;
                touched.push(back);
            }
            let mut l1 = 0.0;
            for &t in &touched {
                l1 += scratch[t].abs();
                scratch[t] = 0.0;
            }
            touched.clear();
            eps = eps.max(reward_gap);
            max_l1 = max_l1.max(l1);
            per_pair.push(PairGap {
                state: s,
                action: a,
                reward_gap,
                transition_l1: l1,
            });
        }
    }
    Ok(SymmetryBudget {
        epsilon_hat: eps,
        delta_hat: m.v_max() * max_l1,
        v_max: m.v_max(),
        per_pair,
    })
}

/// Outcome of checking the performance-error bound on one model/element pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `max |Q*(s,a) - Q*(gs,ga)|` over admissible pairs.
    pub max_error: f64,
    /// `ε̂/(1-γ) + γ δ̂/(1-γ)`
    pub bound_value: f64,
    /// Pair attaining `max_error`.
    pub witness: (usize, usize),
    pub epsilon_hat: f64,
    pub delta_hat: f64,
    pub gamma: f64,
    /// Numerical allowance for the solver, `2·tol/(1-γ)`.
    pub slack: f64,
    pub satisfied: bool,
}

pub fn verify_bound(m: &TabularMdp, g: &IndexTransform, tol: f64) -> Result<BoundReport> {
    let q = value_iteration(m, tol)?;
    verify_bound_with(m, &q, g, tol)
}

/// As [`verify_bound`], reusing a `Q*` already solved to tolerance `tol`.
pub fn verify_bound_with(m: &TabularMdp, q: &QTable, g: &IndexTransform, tol: f64) -> Result<BoundReport> {
    let budget = estimate_budget(m, g)?;
    let mut max_error = 0.0;
    let mut witness = (0, 0);
    for s in 0..m.n_states() {
        for a in 0..m.n_actions() {
            if !m.is_admissible(s, a) {
                continue;
            }
            let err = (q.get(s, a) - q.get(g.state(s), g.action(a))).abs();
            if err > max_error {
                max_error = err;
                witness = (s, a);
            }
        }
    }
    let gamma = m.gamma();
    let bound_value = budget.epsilon_hat / (1.0 - gamma) + gamma * budget.delta_hat / (1.0 - gamma);
    let slack = 2.0 * tol / (1.0 - gamma);
    Ok(BoundReport {
        max_error,
        bound_value,
        witness,
        epsilon_hat: budget.epsilon_hat,
        delta_hat: budget.delta_hat,
        gamma,
        slack,
        satisfied: max_error <= bound_value + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-state swap chain, symmetric under exchanging the states.
    fn swap_chain(r: [f64; 4]) -> TabularMdp {
        TabularMdp::new(
            2,
            2,
            vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)], vec![(0, 1.0)]],
            r.to_vec(),
            vec![true; 4],
            0.9,
            r.iter().fold(0.0_f64, |a, x| a.max(x.abs())),
        )
        .unwrap()
    }

    fn swap() -> IndexTransform {
        IndexTransform::new(vec![1, 0], vec![0, 1]).unwrap()
    }

    #[test]
    fn exact_symmetry_has_zero_budget() {
        let m = swap_chain([1.0, 0.0, 1.0, 0.0]);
        let b = estimate_budget(&m, &swap()).unwrap();
        assert_eq!(b.epsilon_hat, 0.0);
        assert_eq!(b.delta_hat, 0.0);
        let rep = verify_bound(&m, &swap(), 1e-10).unwrap();
        assert!(rep.max_error <= 2e-10 / 0.1);
        assert!(rep.satisfied);
    }

    #[test]
    fn single_reward_perturbation_sets_epsilon() {
        let c = 0.37;
        let m = swap_chain([1.0 + c, 0.0, 1.0, 0.0]);
        let b = estimate_budget(&m, &swap()).unwrap();
        assert!((b.epsilon_hat - c).abs() < 1e-15);
        assert_eq!(b.delta_hat, 0.0);
    }

    #[test]
    fn identity_has_no_error() {
        let m = swap_chain([0.3, -0.2, 0.9, 0.1]);
        let id = IndexTransform::identity(2, 2);
        let rep = verify_bound(&m, &id, 1e-10).unwrap();
        assert_eq!(rep.max_error, 0.0);
        assert_eq!(rep.bound_value, 0.0);
    }

    #[test]
    fn transition_asymmetry_is_total_variation_scaled() {
        // state 0 keeps, state 1 leaks half its mass under the same action
        let m = TabularMdp::new(
            2,
            1,
            vec![vec![(0, 1.0)], vec![(1, 0.5), (0, 0.5)]],
            vec![0.5, 0.5],
            vec![true; 2],
            0.8,
            1.0,
        )
        .unwrap();
        let g = IndexTransform::new(vec![1, 0], vec![0]).unwrap();
        let b = estimate_budget(&m, &g).unwrap();
        // row(0) = δ0, mapped-back row(1) = 0.5 δ0 + 0.5 δ1 → L1 = 1
        assert!((b.delta_hat - 1.0 * 1.0 / 0.2).abs() < 1e-12);
        assert!(b.delta_hat <= 2.0 * b.v_max);
    }

    #[test]
    fn wrong_sized_transform_is_rejected() {
        let m = swap_chain([0.0; 4]);
        let g = IndexTransform::new(vec![0, 1, 2], vec![0, 1]).unwrap();
        assert!(matches!(estimate_budget(&m, &g), Err(Error::Transform(_))));
    }
}
