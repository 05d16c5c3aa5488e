use serde::{Deserialize, Serialize};

use super::mdp::TabularMdp;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 1_000_000;

/// Action-value table of a tabular model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_actions: usize,
    values: Vec<f64>,
    admissible: Vec<bool>,
    /// Number of Bellman sweeps performed.
    pub sweeps: usize,
    /// Sup-norm Bellman residual of the returned table.
    pub residual: f64,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// `max_a Q(s, a)` over admissible actions.
    pub fn state_value(&self, s: usize) -> f64 {
        let base = s * self.n_actions;
        (0..self.n_actions)
            .filter(|&a| self.admissible[base + a])
            .map(|a| self.values[base + a])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn state_values(m: &TabularMdp, q: &[f64]) -> Vec<f64> {
    let na = m.n_actions();
    (0..m.n_states())
        .map(|s| {
            (0..na)
                .filter(|&a| m.is_admissible(s, a))
                .map(|a| q[s * na + a])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn bellman(m: &TabularMdp, v: &[f64], out: &mut [f64]) {
    let na = m.n_actions();
    let gamma = m.gamma();
    for s in 0..m.n_states() {
        for a in 0..na {
            let future: f64 = m.row(s, a).iter().map(|&(t, p)| p * v[t]).sum();
            out[s * na + a] = m.reward(s, a) + gamma * future;
        }
    }
}

/// Iterates `Q_m(s,a) = R(s,a) + γ Σ T(s'|s,a) max_{a'} Q_{m-1}(s',a')` from
/// `Q_0 = 0` until the sup-norm Bellman residual is at most `tol`.
/// Inadmissible pairs never enter the max.
pub fn value_iteration(m: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    m.validate()?;
    let pairs = m.n_states() * m.n_actions();
    let mut q = vec![0.0; pairs];
    let mut next = vec![0.0; pairs];
    for sweep in 1..=MAX_SWEEPS {
        let v = state_values(m, &q);
        bellman(m, &v, &mut next);
        let residual = q
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut q, &mut next);
        if residual <= tol {
            // residual of the new table contracts by γ
            return Ok(QTable {
                n_actions: m.n_actions(),
                values: q,
                admissible: (0..pairs).map(|i| m.is_admissible(i / m.n_actions(), i % m.n_actions())).collect(),
                sweeps: sweep,
                residual: residual * m.gamma(),
            });
        }
    }
    Err(Error::Model(format!(
        "value iteration did not reach tolerance {tol} in {MAX_SWEEPS} sweeps"
    )))
}
