use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Enumerable cooperative Markov game with explicit dynamics.
///
/// Transition rows are stored sparsely, one list of `(next_state, prob)` per
/// `(s, a)` at index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    admissible: Vec<bool>,
    gamma: f64,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<f64>,
        admissible: Vec<bool>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        let m = TabularMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            admissible,
            gamma,
            r_max,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = self.n_states * self.n_actions;
        if pairs == 0 {
            return Err(Error::Model("empty state or action set".into()));
        }
        if self.transitions.len() != pairs
            || self.rewards.len() != pairs
            || self.admissible.len() != pairs
        {
            return Err(Error::Model(format!(
                "table sizes do not match {} states x {} actions",
                self.n_states, self.n_actions
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "discount must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !self.r_max.is_finite() || self.r_max < 0.0 {
            return Err(Error::Model(format!("invalid reward bound {}", self.r_max)));
        }
        for (idx, row) in self.transitions.iter().enumerate() {
            let (s, a) = (idx / self.n_actions, idx % self.n_actions);
            let mut total = 0.0;
            for &(next, p) in row {
                if next >= self.n_states || !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::Model(format!(
                        "bad transition entry ({next}, {p}) at ({s},{a})"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Model(format!(
                    "transition row ({s},{a}) sums to {total}"
                )));
            }
            let r = self.rewards[idx];
            if !r.is_finite() || r.abs() > self.r_max + ROW_SUM_TOL {
                return Err(Error::Model(format!(
                    "reward {r} at ({s},{a}) exceeds bound {}",
                    self.r_max
                )));
            }
        }
        for s in 0..self.n_states {
            if !(0..self.n_actions).any(|a| self.is_admissible(s, a)) {
                return Err(Error::Model(format!("state {s} has no admissible action")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `R_max / (1 - γ)`, a bound on every value function of the model.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn is_admissible(&self, s: usize, a: usize) -> bool {
        self.admissible[s * self.n_actions + a]
    }

    /// Same dynamics with a replaced reward table; `r_max` grows if needed.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        let r_max = rewards
            .iter()
            .fold(self.r_max, |acc, r| acc.max(r.abs()));
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            rewards,
            self.admissible.clone(),
            self.gamma,
            r_max,
        )
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

/// A group element realised as index permutations of a tabular model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexTransform {
    state_map: Vec<usize>,
    action_map: Vec<usize>,
}

fn check_bijection(map: &[usize], what: &str) -> Result<()> {
    let mut seen = vec![false; map.len()];
    for &i in map {
        if i >= map.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Transform(format!("{what} map is not a bijection")));
        }
    }
    Ok(())
}

impl IndexTransform {
    pub fn new(state_map: Vec<usize>, action_map: Vec<usize>) -> Result<Self> {
        check_bijection(&state_map, "state")?;
        check_bijection(&action_map, "action")?;
        Ok(IndexTransform {
            state_map,
            action_map,
        })
    }

    pub fn identity(n_states: usize, n_actions: usize) -> Self {
        IndexTransform {
            state_map: (0..n_states).collect(),
            action_map: (0..n_actions).collect(),
        }
    }

    pub fn state(&self, s: usize) -> usize {
        self.state_map[s]
    }

    pub fn action(&self, a: usize) -> usize {
        self.action_map[a]
    }

    pub fn state_map(&self) -> &[usize] {
        &self.state_map
    }

    pub fn action_map(&self) -> &[usize] {
        &self.action_map
    }

    pub fn inverse(&self) -> IndexTransform {
        let invert = |m: &[usize]| {
            let mut inv = vec![0; m.len()];
            for (i, &j) in m.iter().enumerate() {
                inv[j] = i;
            }
            inv
        };
        IndexTransform {
            state_map: invert(&self.state_map),
            action_map: invert(&self.action_map),
        }
    }

    pub fn check_fits(&self, m: &TabularMdp) -> Result<()> {
        if self.state_map.len() != m.n_states() || self.action_map.len() != m.n_actions() {
            return Err(Error::Transform(format!(
                "transform acts on {}x{} indices, model has {}x{}",
                self.state_map.len(),
                self.action_map.len(),
                m.n_states(),
                m.n_actions()
            )));
        }
        Ok(())
    }
}
