use serde::{Deserialize, Serialize};

use crate::config::derive_seed;
use crate::envs::{Action, GridWorld, JointAction};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::Config("evaluation needs at least one episode".into()));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(EvalReport { returns, mean, std })
    }
}

/// Highest-logit action for each agent row; ties go to the lower index.
pub fn greedy_actions(actor: &Mlp, obs: &Matrix) -> Result<Vec<Action>> {
    let logits = actor.forward(obs)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            Action::ALL[best]
        })
        .collect())
}

/// Greedy rollouts of whole episodes. Episode `i` uses seed `derive(seed, i)`
/// for both its initial state and its transition noise.
pub fn evaluate(actor: &Mlp, world: &GridWorld, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let ep_seed = derive_seed(seed, 3, ep as u64);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(ep_seed);
        let mut state = world.reset(ep_seed)?;
        let mut total = 0.0;
        loop {
            let obs = super::rollout::observation_matrix(world, [&state])?;
            let action = JointAction::new(greedy_actions(actor, &obs)?);
            let out = world.step(&state, &action, &mut rng)?;
            total += out.reward;
            state = out.state;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    EvalReport::from_returns(returns)
}
