use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::config::derive_seed;
use crate::envs::{Action, EnvState, Environment, GridEnv, GridWorld, JointAction};
use crate::error::{Error, Result};
use crate::nn::{forward_policy, Matrix, Mlp};
use crate::pse::Transition;

/// One environment plus its episode bookkeeping.
#[derive(Debug, Clone)]
pub struct RolloutEnv {
    env: GridEnv,
    seed_base: u64,
    episodes: u64,
    episode_return: f64,
}

impl RolloutEnv {
    pub fn new(world: Arc<GridWorld>, seed_base: u64) -> Result<Self> {
        Ok(RolloutEnv {
            env: GridEnv::new(world, derive_seed(seed_base, 0, 0))?,
            seed_base,
            episodes: 0,
            episode_return: 0.0,
        })
    }

    pub fn state(&self) -> &EnvState {
        self.env.state()
    }
}

/// One joint step of one environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub env_index: usize,
    pub state: EnvState,
    pub action: JointAction,
    pub log_probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub next_state: EnvState,
}

/// On-policy storage for one iteration, laid out time-major
/// (`steps[t · n_envs + e]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub length: usize,
    pub steps: Vec<Step>,
    /// Value of each environment's state after the last step.
    pub bootstrap: Vec<f64>,
    /// Undiscounted returns of episodes that finished during the rollout.
    pub completed_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize, e: usize) -> &Step {
        &self.steps[t * self.n_envs + e]
    }

    /// Pairs every step with its advantage and return target.
    pub fn transitions(&self, advantages: &[f64], returns: &[f64]) -> Vec<Transition> {
        self.steps
            .iter()
            .zip(advantages.iter().zip(returns))
            .map(|(s, (&advantage, &return_target))| Transition {
                state: s.state.clone(),
                action: s.action.clone(),
                reward: s.reward,
                next_state: s.next_state.clone(),
                done: s.done,
                log_probs: s.log_probs.clone(),
                advantage,
                return_target,
            })
            .collect()
    }
}

/// Per-agent observation rows for a list of states.
pub fn observation_matrix<'a>(
    world: &GridWorld,
    states: impl IntoIterator<Item = &'a EnvState>,
) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = states
        .into_iter()
        .flat_map(|s| (0..world.n_agents()).map(move |i| world.feature_vector(s, i)))
        .collect();
    Matrix::from_rows(&rows)
}

pub fn global_matrix<'a>(
    world: &GridWorld,
    states: impl IntoIterator<Item = &'a EnvState>,
) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = states.into_iter().map(|s| world.global_features(s)).collect();
    Matrix::from_rows(&rows)
}

/// Steps every environment `length` times, sampling each agent's action from
/// the shared policy. Finished episodes restart from a derived seed.
pub fn collect_rollout(
    envs: &mut [RolloutEnv],
    world: &GridWorld,
    actor: &Mlp,
    critic: &Mlp,
    length: usize,
    rng: &mut impl Rng,
) -> Result<RolloutBuffer> {
    let n_envs = envs.len();
    let n_agents = world.n_agents();
    let mut steps = Vec::with_capacity(length * n_envs);
    let mut completed_returns = Vec::new();
    for _ in 0..length {
        let obs = observation_matrix(world, envs.iter().map(RolloutEnv::state))?;
        let policy = forward_policy(actor, &obs)?;
        let values = critic.forward(&global_matrix(world, envs.iter().map(RolloutEnv::state))?)?;
        for (e, slot) in envs.iter_mut().enumerate() {
            let mut actions = Vec::with_capacity(n_agents);
            let mut log_probs = Vec::with_capacity(n_agents);
            for i in 0..n_agents {
                let row = e * n_agents + i;
                let dist = WeightedIndex::new(policy.row(row))
                    .map_err(|err| Error::Training(format!("invalid policy row {row}: {err}")))?;
                let a = dist.sample(rng);
                actions.push(Action::ALL[a]);
                log_probs.push(policy.log_probs.get(row, a));
            }
            let state = slot.env.state().clone();
            let action = JointAction::new(actions);
            let out = slot
                .env
                .step(&action)
                .map_err(|err| Error::Training(format!("env {e} step failed: {err}")))?;
            slot.episode_return += out.reward;
            if out.done {
                completed_returns.push(slot.episode_return);
                slot.episode_return = 0.0;
                slot.episodes += 1;
                slot.env.reset(derive_seed(slot.seed_base, 0, slot.episodes))?;
            }
            steps.push(Step {
                env_index: e,
                state,
                action,
                log_probs,
                reward: out.reward,
                value: values.get(e, 0),
                done: out.done,
                next_state: out.state,
            });
        }
    }
    let last = critic.forward(&global_matrix(world, envs.iter().map(RolloutEnv::state))?)?;
    Ok(RolloutBuffer {
        n_envs,
        length,
        steps,
        bootstrap: last.into_data(),
        completed_returns,
    })
}

/// GAE(λ) over one environment's sequence. `bootstrap` is the value after
/// the last step; `done` cuts both the bootstrap and the trace.
pub fn gae_sequence(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { bootstrap } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lam * live * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Advantages and return targets in buffer order.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = vec![0.0; buffer.len()];
    let mut ret = vec![0.0; buffer.len()];
    for e in 0..buffer.n_envs {
        let seq: Vec<&Step> = (0..buffer.length).map(|t| buffer.step(t, e)).collect();
        let rewards: Vec<f64> = seq.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = seq.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = seq.iter().map(|s| s.done).collect();
        let (a, r) = gae_sequence(&rewards, &values, &dones, buffer.bootstrap[e], gamma, lam);
        for t in 0..buffer.length {
            adv[t * buffer.n_envs + e] = a[t];
            ret[t * buffer.n_envs + e] = r[t];
        }
    }
    (adv, ret)
}
