//! Adaptive symmetry exploitation: the annealed coefficients, the
//! augmentation gate, transformed-sample augmentation and the policy/value
//! consistency losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvState, GridWorld, JointAction, N_ACTIONS};
use crate::error::{Error, Result};
use crate::groups::{Group, GroupElement, TransformPair};
use crate::nn::{Matrix, Mlp, Tape, Var};

/// `D · exp(−β k)`.
pub fn lambda_at(d: f64, beta: f64, k: u64) -> f64 {
    d * (-beta * k as f64).exp()
}

/// Annealed coefficients driven by the measured symmetry degree `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseSchedule {
    d: f64,
    beta1: f64,
    beta2: f64,
    k: u64,
}

impl PseSchedule {
    pub fn new(d: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Config(format!("D must lie in [0, 1], got {d}")));
        }
        if !(beta1 > 0.0 && beta2 > 0.0) || !beta1.is_finite() || !beta2.is_finite() {
            return Err(Error::Config(format!(
                "decay rates must be positive, got {beta1} and {beta2}"
            )));
        }
        Ok(PseSchedule { d, beta1, beta2, k: 0 })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn set_d(&mut self, d: f64) -> Result<()> {
        *self = PseSchedule { k: self.k, ..PseSchedule::new(d, self.beta1, self.beta2)? };
        Ok(())
    }

    /// Augmentation probability.
    pub fn lambda1(&self) -> f64 {
        lambda_at(self.d, self.beta1, self.k)
    }

    /// Consistency-loss weight.
    pub fn lambda2(&self) -> f64 {
        lambda_at(self.d, self.beta2, self.k)
    }

    pub fn advance(&mut self) {
        self.k += 1;
    }
}

/// True with probability `lambda1`. Always consumes exactly one draw.
pub fn augmentation_gate(lambda1: f64, rng: &mut impl Rng) -> bool {
    rng.gen::<f64>() < lambda1
}

/// One timestep of experience, after advantage estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: JointAction,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    /// Behaviour log-probability of each agent's action.
    pub log_probs: Vec<f64>,
    pub advantage: f64,
    pub return_target: f64,
}

impl Transition {
    /// The image under `g`; reward, done, advantage and return are copied.
    pub fn transformed(&self, g: &TransformPair) -> Result<Transition> {
        Ok(Transition {
            state: g.transform_state(&self.state)?,
            action: g.transform_action(&self.action)?,
            next_state: g.transform_state(&self.next_state)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub entries: Vec<Transition>,
    /// `None` for original entries, the applied element otherwise.
    pub tags: Vec<Option<GroupElement>>,
    pub applied: bool,
}

impl AugmentedBatch {
    pub fn original(batch: Vec<Transition>) -> Self {
        let tags = vec![None; batch.len()];
        AugmentedBatch {
            entries: batch,
            tags,
            applied: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Appends one transformed copy of every transition, each with its own
/// element drawn uniformly from the non-identity elements. `log_probs`
/// supplies the current policy's per-agent log-probabilities at `(gs, ga)`.
pub fn augment_batch<R, F>(
    batch: Vec<Transition>,
    group: &Group,
    grid_size: usize,
    rng: &mut R,
    mut log_probs: F,
) -> Result<AugmentedBatch>
where
    R: Rng + ?Sized,
    F: FnMut(&EnvState, &JointAction) -> Result<Vec<f64>>,
{
    if group.is_trivial() {
        return Err(Error::Config(
            "augmentation requested for a trivial symmetry group".into(),
        ));
    }
    let mut out = AugmentedBatch::original(batch);
    let n = out.entries.len();
    for i in 0..n {
        let element = group
            .sample_non_identity(rng)
            .cloned()
            .ok_or_else(|| Error::Config("group has no non-identity element".into()))?;
        let g = TransformPair::new(element.clone(), grid_size);
        let mut t = out.entries[i].transformed(&g)?;
        t.log_probs = log_probs(&t.state, &t.action)?;
        out.entries.push(t);
        out.tags.push(Some(element));
    }
    out.applied = true;
    Ok(out)
}

/// Which distribution comes first in the policy consistency KL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL[π(·|gs) permuted back ‖ π(·|s)]`
    #[default]
    TransformedFirst,
    /// `KL[π(·|s) ‖ π(·|gs) permuted back]`
    OriginalFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KlOptions {
    pub direction: KlDirection,
    /// Treat `π(·|s)` as a fixed target.
    pub stop_gradient_target: bool,
}

/// Encoded inputs for both consistency losses on a batch of states under one `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyInputs {
    /// Row `t·n + i`: agent `i`'s observation of state `t`.
    pub obs: Matrix,
    /// Row `t·n + i`: observation of `g s_t` by the agent that `i` becomes.
    pub obs_g: Matrix,
    pub global: Matrix,
    pub global_g: Matrix,
    /// `P[rot(a), a] = 1`, so `L·P` reads the transformed distribution in original action order.
    pub action_perm: Matrix,
}

impl ConsistencyInputs {
    pub fn build(world: &GridWorld, states: &[EnvState], g: &TransformPair) -> Result<Self> {
        let n = world.n_agents();
        let perm = g.element().agent_perm().to_vec();
        let (mut obs, mut obs_g, mut global, mut global_g) = (vec![], vec![], vec![], vec![]);
        for s in states {
            let gs = g.transform_state(s)?;
            for (i, &pi) in perm.iter().enumerate().take(n) {
                obs.push(world.feature_vector(s, i));
                obs_g.push(world.feature_vector(&gs, pi));
            }
            global.push(world.global_features(s));
            global_g.push(world.global_features(&gs));
        }
        let mut action_perm = Matrix::zeros(N_ACTIONS, N_ACTIONS);
        for a in crate::envs::Action::ALL {
            action_perm.set(g.rotate_action(a).index(), a.index(), 1.0);
        }
        Ok(ConsistencyInputs {
            obs: Matrix::from_rows(&obs)?,
            obs_g: Matrix::from_rows(&obs_g)?,
            global: Matrix::from_rows(&global)?,
            global_g: Matrix::from_rows(&global_g)?,
            action_perm,
        })
    }
}

/// Mean per-agent KL between the policy at `s` and the action-permuted policy at `gs`.
pub fn policy_consistency_loss(
    tape: &mut Tape,
    actor: &Mlp,
    params: &[Var],
    inputs: &ConsistencyInputs,
    opts: KlOptions,
) -> Result<Var> {
    let x = tape.constant(inputs.obs.clone());
    let xg = tape.constant(inputs.obs_g.clone());
    let perm = tape.constant(inputs.action_perm.clone());
    let logits = actor.forward_on(tape, params, x)?;
    let mut log_q = tape.log_softmax(logits);
    if opts.stop_gradient_target {
        log_q = tape.detach(log_q);
    }
    let logits_g = actor.forward_on(tape, params, xg)?;
    let log_pg = tape.log_softmax(logits_g);
    let log_p = tape.matmul(log_pg, perm)?;
    let kl = match opts.direction {
        KlDirection::TransformedFirst => tape.kl_categorical(log_p, log_q)?,
        KlDirection::OriginalFirst => tape.kl_categorical(log_q, log_p)?,
    };
    Ok(tape.mean(kl))
}

/// Mean of `(V(s) − V(gs))²`.
pub fn value_consistency_loss(
    tape: &mut Tape,
    critic: &Mlp,
    params: &[Var],
    inputs: &ConsistencyInputs,
) -> Result<Var> {
    let x = tape.constant(inputs.global.clone());
    let xg = tape.constant(inputs.global_g.clone());
    let v = critic.forward_on(tape, params, x)?;
    let vg = critic.forward_on(tape, params, xg)?;
    let diff = tape.sub(v, vg)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// `j − λ₂ (s_pi + s_v)`.
pub fn pse_objective(j_mappo: f64, s_pi: f64, s_v: f64, lambda2: f64) -> Result<f64> {
    let out = j_mappo - lambda2 * (s_pi + s_v);
    if !out.is_finite() {
        return Err(Error::Training(format!(
            "non-finite objective: j={j_mappo} s_pi={s_pi} s_v={s_v} lambda2={lambda2}"
        )));
    }
    Ok(out)
}
