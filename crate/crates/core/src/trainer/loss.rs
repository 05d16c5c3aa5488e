use crate::envs::GridWorld;
use crate::error::Result;
use crate::nn::{Matrix, Mlp, Tape, Var};
use crate::pse::Transition;

use super::rollout::{global_matrix, observation_matrix};

/// Dense inputs for one minibatch. Agent rows are `entry · n_agents + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchTensors {
    pub obs: Matrix,
    pub global: Matrix,
    pub actions: Vec<usize>,
    pub old_log_probs: Matrix,
    /// Entry advantage repeated for each agent row.
    pub advantages: Matrix,
    pub returns: Matrix,
}

impl MinibatchTensors {
    pub fn build(world: &GridWorld, entries: &[&Transition]) -> Result<Self> {
        let obs = observation_matrix(world, entries.iter().map(|t| &t.state))?;
        let global = global_matrix(world, entries.iter().map(|t| &t.state))?;
        let n = world.n_agents();
        let actions = entries
            .iter()
            .flat_map(|t| t.action.iter().map(|a| a.index()))
            .collect();
        let old_log_probs = Matrix::column(entries.iter().flat_map(|t| t.log_probs.iter().copied()).collect());
        let advantages = Matrix::column(
            entries
                .iter()
                .flat_map(|t| std::iter::repeat_n(t.advantage, n))
                .collect(),
        );
        let returns = Matrix::column(entries.iter().map(|t| t.return_target).collect());
        Ok(MinibatchTensors {
            obs,
            global,
            actions,
            old_log_probs,
            advantages,
            returns,
        })
    }
}

/// The three PPO terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PpoTerms {
    /// Mean clipped surrogate (to be maximized).
    pub surrogate: Var,
    /// Mean squared error of the critic against the return targets.
    pub value_loss: Var,
    /// Mean per-agent policy entropy.
    pub entropy: Var,
}

pub fn clipped_surrogate(
    tape: &mut Tape,
    actor: &Mlp,
    params: &[Var],
    mb: &MinibatchTensors,
    clip: f64,
) -> Result<(Var, Var)> {
    let x = tape.constant(mb.obs.clone());
    let logits = actor.forward_on(tape, params, x)?;
    let log_probs = tape.log_softmax(logits);
    let picked = tape.gather(log_probs, &mb.actions)?;
    let old = tape.constant(mb.old_log_probs.clone());
    let diff = tape.sub(picked, old)?;
    let ratio = tape.exp(diff);
    let adv = tape.constant(mb.advantages.clone());
    let unclipped = tape.mul(ratio, adv)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = tape.mul(clipped_ratio, adv)?;
    let surr = tape.min(unclipped, clipped)?;
    Ok((tape.mean(surr), log_probs))
}

/// Mean entropy of the per-row distributions given their log-probabilities.
pub fn entropy(tape: &mut Tape, log_probs: Var) -> Var {
    let probs = tape.exp(log_probs);
    let plogp = tape.mul(probs, log_probs).expect("same shape");
    let rows = tape.sum_cols(plogp);
    let mean = tape.mean(rows);
    tape.scale(mean, -1.0)
}

pub fn value_loss(tape: &mut Tape, critic: &Mlp, params: &[Var], mb: &MinibatchTensors) -> Result<Var> {
    let x = tape.constant(mb.global.clone());
    let v = critic.forward_on(tape, params, x)?;
    let target = tape.constant(mb.returns.clone());
    let err = tape.sub(v, target)?;
    let sq = tape.square(err);
    Ok(tape.mean(sq))
}

pub fn ppo_terms(
    tape: &mut Tape,
    actor: (&Mlp, &[Var]),
    critic: (&Mlp, &[Var]),
    mb: &MinibatchTensors,
    clip: f64,
) -> Result<PpoTerms> {
    let (surrogate, log_probs) = clipped_surrogate(tape, actor.0, actor.1, mb, clip)?;
    let entropy = entropy(tape, log_probs);
    let value_loss = value_loss(tape, critic.0, critic.1, mb)?;
    Ok(PpoTerms {
        surrogate,
        value_loss,
        entropy,
    })
}
