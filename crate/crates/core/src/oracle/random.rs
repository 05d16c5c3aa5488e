//! Seeded random tabular models with a controllable amount of asymmetry.
//!
//! A random model is symmetrised by averaging over the powers of a fixed
//! order-4 index permutation `g`, then perturbed: rewards by uniform noise
//! of scale `epsilon_knob`, transitions by mixing in a random law with
//! weight `delta_knob`. Knobs of zero give an exactly symmetric model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{IndexTransform, TabularMdp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Successors per base row; `None` means dense rows.
    pub branching: Option<usize>,
    /// Largest reward perturbation scale drawn per instance.
    pub max_epsilon_knob: f64,
    /// Largest transition mixing weight drawn per instance.
    pub max_delta_knob: f64,
    /// Probability that an orbit of pairs is made inadmissible.
    pub mask_probability: f64,
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        RandomMdpSpec {
            n_states: 32,
            n_actions: 8,
            gamma: 0.9,
            branching: Some(4),
            max_epsilon_knob: 0.5,
            max_delta_knob: 0.5,
            mask_probability: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub mdp: TabularMdp,
    pub transform: IndexTransform,
    pub epsilon_knob: f64,
    pub delta_knob: f64,
}

/// Random permutation made of 4-cycles, with `n % 4` fixed points.
fn order_four_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n).collect();
    items.shuffle(rng);
    let mut map: Vec<usize> = (0..n).collect();
    for cycle in items.chunks_exact(4) {
        for k in 0..4 {
            map[cycle[k]] = cycle[(k + 1) % 4];
        }
    }
    map
}

impl RandomMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Config("random models need states and actions".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.branching == Some(0) {
            return Err(Error::Config("branching must be positive".into()));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<RandomInstance> {
        self.validate()?;
        let (ns, na) = (self.n_states, self.n_actions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state_map = order_four_permutation(ns, &mut rng);
        let action_map = order_four_permutation(na, &mut rng);
        let g = IndexTransform::new(state_map, action_map)?;

        // one in five instances is exactly symmetric
        let (epsilon_knob, delta_knob) = if rng.gen_bool(0.2) {
            (0.0, 0.0)
        } else {
            (
                rng.gen_range(0.0..=self.max_epsilon_knob),
                rng.gen_range(0.0..=self.max_delta_knob),
            )
        };

        let random_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut row = vec![0.0; ns];
            let k = self.branching.unwrap_or(ns).min(ns);
            let picks = rand::seq::index::sample(rng, ns, k);
            for t in picks.iter() {
                row[t] = rng.gen_range(0.05..1.0);
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
            row
        };

        let pairs = ns * na;
        let base_t: Vec<Vec<f64>> = (0..pairs).map(|_| random_row(&mut rng)).collect();
        let base_r: Vec<f64> = (0..pairs).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let powers: Vec<IndexTransform> = {
            let mut out = vec![IndexTransform::identity(ns, na)];
            for _ in 1..4 {
                let prev = out.last().unwrap();
                let sm = prev.state_map().iter().map(|&s| g.state(s)).collect();
                let am = prev.action_map().iter().map(|&a| g.action(a)).collect();
                out.push(IndexTransform::new(sm, am)?);
            }
            out
        };

        let mut rewards = vec![0.0; pairs];
        let mut dense = vec![vec![0.0; ns]; pairs];
        for s in 0..ns {
            for a in 0..na {
                let idx = s * na + a;
                for h in &powers {
                    let hidx = h.state(s) * na + h.action(a);
                    rewards[idx] += 0.25 * base_r[hidx];
                    for (t, p) in dense[idx].iter_mut().enumerate() {
                        *p += 0.25 * base_t[hidx][h.state(t)];
                    }
                }
            }
        }

        // symmetric admissibility: mask whole orbits, then reopen action 0's orbit
        // wherever a state lost every action
        let mut admissible = vec![true; pairs];
        for s in 0..ns {
            for a in 0..na {
                if rng.gen_bool(self.mask_probability) {
                    for h in &powers {
                        admissible[h.state(s) * na + h.action(a)] = false;
                    }
                }
            }
        }
        for s in 0..ns {
            if !(0..na).any(|a| admissible[s * na + a]) {
                for h in &powers {
                    admissible[h.state(s) * na + h.action(0)] = true;
                }
            }
        }

        for idx in 0..pairs {
            rewards[idx] += epsilon_knob * rng.gen_range(-1.0..1.0);
            if delta_knob > 0.0 {
                let noise = random_row(&mut rng);
                for (p, q) in dense[idx].iter_mut().zip(noise) {
                    *p = (1.0 - delta_knob) * *p + delta_knob * q;
                }
            }
        }

        let transitions = dense
            .into_iter()
            .map(|row| {
                let z: f64 = row.iter().sum();
                row.into_iter()
                    .enumerate()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(t, p)| (t, p / z))
                    .collect()
            })
            .collect();
        let r_max = rewards.iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
        let mdp = TabularMdp::new(ns, na, transitions, rewards, admissible, self.gamma, r_max)?;
        Ok(RandomInstance {
            seed,
            mdp,
            transform: g,
            epsilon_knob,
            delta_knob,
        })
    }
}
