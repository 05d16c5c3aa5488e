//! Multi-agent PPO with a shared actor and a centralized critic, hosting the
//! `mappo`, `mappo-se` and `mappo-pse` variants.

mod evaluate;
mod loss;
mod rollout;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig, Variant};
use crate::envs::{GridEnv, GridWorld};
use crate::error::{Error, Result};
use crate::groups::{Group, TransformPair};
use crate::nn::{clip_grad_norm, forward_policy, Adam, Checkpoint, Matrix, Mlp, Tape};
use crate::pse::{
    augment_batch, augmentation_gate, policy_consistency_loss, pse_objective, value_consistency_loss,
    AugmentedBatch, ConsistencyInputs, KlOptions, PseSchedule, Transition,
};
use crate::quantify::{probe, SymmetryReport};

pub use evaluate::{evaluate, greedy_actions, EvalReport};
pub use loss::{clipped_surrogate, entropy, ppo_terms, value_loss, MinibatchTensors, PpoTerms};
pub use rollout::{
    collect_rollout, compute_gae, gae_sequence, global_matrix, observation_matrix, RolloutBuffer, RolloutEnv,
    Step,
};

/// One row of the learning-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    /// Mean undiscounted return of episodes finished in this iteration's rollout.
    pub mean_return: Option<f64>,
    pub episodes: usize,
    pub d: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub augmented: bool,
    pub batch_size: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub s_pi: f64,
    pub s_v: f64,
    pub objective: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// How symmetry is exploited in the current iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coefficients {
    Off,
    Fixed { lambda2: f64 },
    Annealed(PseSchedule),
}

#[derive(Debug, Default, Clone, Copy)]
struct Accum {
    n: f64,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    s_pi: f64,
    s_v: f64,
    objective: f64,
    actor_norm: f64,
    critic_norm: f64,
}

#[derive(Serialize)]
struct NanDump<'a> {
    iteration: u64,
    epoch: usize,
    minibatch: usize,
    components: [f64; 5],
    entries: Vec<&'a Transition>,
}

pub struct Trainer {
    cfg: RunConfig,
    seed: u64,
    world: Arc<GridWorld>,
    group: Group,
    actor: Mlp,
    critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    envs: Vec<RolloutEnv>,
    coefficients: Coefficients,
    d: f64,
    report: Option<SymmetryReport>,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    symmetry_rng: ChaCha8Rng,
    iteration: u64,
    env_steps: u64,
    diagnostics_dir: Option<PathBuf>,
}

pub(crate) fn probe_d(cfg: &RunConfig, world: &Arc<GridWorld>, group: &Group, seed: u64) -> Result<SymmetryReport> {
    let mut env = GridEnv::new(world.clone(), seed)?;
    probe(
        &mut env,
        &group.non_identity_transforms(world.grid_size()),
        cfg.pse.probes,
        cfg.pse.tau,
        seed,
    )
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let world = Arc::new(GridWorld::new(cfg.env.clone())?);
        let group = Group::new(&cfg.group, cfg.env.n_agents)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10, 0));
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&cfg.nn.hidden);
            s.push(output);
            s
        };
        let actor = Mlp::new(
            &sizes(world.obs_dim(), crate::envs::N_ACTIONS),
            cfg.nn.activation,
            cfg.nn.actor_out_gain,
            &mut init_rng,
        )?;
        let critic = Mlp::new(
            &sizes(world.global_dim(), 1),
            cfg.nn.activation,
            cfg.nn.critic_out_gain,
            &mut init_rng,
        )?;
        let envs = (0..cfg.train.n_envs)
            .map(|e| RolloutEnv::new(world.clone(), derive_seed(seed, 20, e as u64)))
            .collect::<Result<Vec<_>>>()?;
        let (mut d, mut report) = (0.0, None);
        let coefficients = match cfg.train.variant {
            Variant::Mappo => Coefficients::Off,
            Variant::MappoSe => Coefficients::Fixed {
                lambda2: cfg.pse.se_coefficient,
            },
            Variant::MappoPse => {
                let measured = match cfg.pse.d {
                    Some(d) => d,
                    None => {
                        let r = probe_d(cfg, &world, &group, derive_seed(seed, 7, 0))?;
                        let d = r.d_mean;
                        report = Some(r);
                        d
                    }
                };
                d = if measured >= cfg.pse.tau { measured } else { 0.0 };
                Coefficients::Annealed(PseSchedule::new(d, cfg.beta1(), cfg.beta2())?)
            }
        };
        Ok(Trainer {
            actor_opt: Adam::new(actor.params(), cfg.train.adam),
            critic_opt: Adam::new(critic.params(), cfg.train.adam),
            cfg: cfg.clone(),
            seed,
            world,
            group,
            actor,
            critic,
            envs,
            coefficients,
            d,
            report,
            action_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 11, 0)),
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 12, 0)),
            symmetry_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 13, 0)),
            iteration: 0,
            env_steps: 0,
            diagnostics_dir: None,
        })
    }

    /// Where to write the offending minibatch if a loss turns non-finite.
    pub fn with_diagnostics_dir(mut self, dir: &Path) -> Self {
        self.diagnostics_dir = Some(dir.to_path_buf());
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Symmetry degree driving the schedule (0 unless the variant is `mappo-pse`).
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn symmetry_report(&self) -> Option<&SymmetryReport> {
        self.report.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.iteration, &self.actor, &self.critic)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let (actor, critic) = ckpt.networks()?;
        if actor.sizes() != self.actor.sizes() || critic.sizes() != self.critic.sizes() {
            return Err(Error::Config("checkpoint does not match the configured networks".into()));
        }
        self.actor = actor;
        self.critic = critic;
        Ok(())
    }

    /// `(λ₁, λ₂)` for the current iteration.
    pub fn lambdas(&self) -> (f64, f64) {
        match self.coefficients {
            Coefficients::Off => (0.0, 0.0),
            Coefficients::Fixed { lambda2 } => (1.0, lambda2),
            Coefficients::Annealed(s) => (s.lambda1(), s.lambda2()),
        }
    }

    pub fn collect(&mut self) -> Result<RolloutBuffer> {
        let buf = collect_rollout(
            &mut self.envs,
            &self.world,
            &self.actor,
            &self.critic,
            self.cfg.train.rollout_length,
            &mut self.action_rng,
        )?;
        self.env_steps += buf.len() as u64;
        Ok(buf)
    }

    /// One collect → advantage → update cycle.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        if let (Some(every), Coefficients::Annealed(_)) = (self.cfg.pse.requantify_every, self.coefficients) {
            if self.iteration > 0 && self.iteration.is_multiple_of(every) && self.cfg.pse.d.is_none() {
                self.requantify()?;
            }
        }
        let buffer = self.collect()?;
        self.update(&buffer)
    }

    fn requantify(&mut self) -> Result<()> {
        let r = probe_d(&self.cfg, &self.world, &self.group, derive_seed(self.seed, 7, self.iteration))?;
        self.d = if r.d_mean >= self.cfg.pse.tau { r.d_mean } else { 0.0 };
        if let Coefficients::Annealed(s) = &mut self.coefficients {
            s.set_d(self.d)?;
        }
        self.report = Some(r);
        Ok(())
    }

    /// Runs the remaining iterations, handing each row to `on_iteration`.
    pub fn run(&mut self, mut on_iteration: impl FnMut(&Trainer, &IterationMetrics) -> Result<()>) -> Result<()> {
        while self.iteration < self.cfg.train.iterations {
            let m = self.train_iteration()?;
            on_iteration(self, &m)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalReport> {
        evaluate(&self.actor, &self.world, episodes, seed)
    }

    fn current_log_probs(&self, states: &[&crate::envs::EnvState], actions: &[&crate::envs::JointAction]) -> Result<Vec<Vec<f64>>> {
        let obs = observation_matrix(&self.world, states.iter().copied())?;
        let policy = forward_policy(&self.actor, &obs)?;
        let n = self.world.n_agents();
        Ok(actions
            .iter()
            .enumerate()
            .map(|(k, a)| a.iter().enumerate().map(|(i, act)| policy.log_probs.get(k * n + i, act.index())).collect())
            .collect())
    }

    /// PPO epochs over the buffer, with the variant's symmetry terms. Advances `k`.
    pub fn update(&mut self, buffer: &RolloutBuffer) -> Result<IterationMetrics> {
        let tc = self.cfg.train.clone();
        let (mut adv, ret) = compute_gae(buffer, self.cfg.env.gamma, tc.gae_lambda);
        if tc.normalize_advantages && adv.len() > 1 {
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        let transitions = buffer.transitions(&adv, &ret);
        let (lambda1, lambda2) = self.lambdas();
        let gate = match self.coefficients {
            Coefficients::Off => false,
            Coefficients::Fixed { .. } => true,
            Coefficients::Annealed(_) => augmentation_gate(lambda1, &mut self.symmetry_rng),
        };
        let batch = if gate && !self.group.is_trivial() {
            let grid = self.world.grid_size();
            let group = self.group.clone();
            let mut rng = self.symmetry_rng.clone();
            let out = augment_batch(transitions, &group, grid, &mut rng, |s, a| {
                Ok(self.current_log_probs(&[s], &[a])?.remove(0))
            })?;
            self.symmetry_rng = rng;
            out
        } else {
            AugmentedBatch::original(transitions)
        };
        let use_consistency = lambda2 > 0.0 && !self.group.is_trivial();
        let kl = KlOptions {
            direction: self.cfg.pse.kl_direction,
            stop_gradient_target: self.cfg.pse.stop_gradient_target,
        };
        let n_entries = batch.len();
        let mb_size = n_entries.div_ceil(tc.minibatches);
        let mut acc = Accum::default();
        let mut order: Vec<usize> = (0..n_entries).collect();
        for epoch in 0..tc.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for (mb_index, chunk) in order.chunks(mb_size).enumerate() {
                let entries: Vec<&Transition> = chunk.iter().map(|&i| &batch.entries[i]).collect();
                let mb = MinibatchTensors::build(&self.world, &entries)?;
                let mut tape = Tape::new();
                let ap = self.actor.bind(&mut tape);
                let cp = self.critic.bind(&mut tape);
                let terms = ppo_terms(&mut tape, (&self.actor, &ap), (&self.critic, &cp), &mb, tc.clip_ratio)?;
                let a = tape.scale(terms.surrogate, -1.0);
                let b = tape.scale(terms.entropy, -tc.entropy_coef);
                let c = tape.scale(terms.value_loss, tc.value_coef);
                let ab = tape.add(a, b)?;
                let mut loss = tape.add(ab, c)?;
                let (mut s_pi, mut s_v) = (0.0, 0.0);
                if use_consistency {
                    let element = self
                        .group
                        .sample_non_identity(&mut self.symmetry_rng)
                        .cloned()
                        .ok_or_else(|| Error::Training("no non-identity element".into()))?;
                    let g = TransformPair::new(element, self.world.grid_size());
                    let states: Vec<_> = entries.iter().map(|t| t.state.clone()).collect();
                    let inputs = ConsistencyInputs::build(&self.world, &states, &g)?;
                    let sp = policy_consistency_loss(&mut tape, &self.actor, &ap, &inputs, kl)?;
                    let sv = value_consistency_loss(&mut tape, &self.critic, &cp, &inputs)?;
                    s_pi = tape.value(sp).item();
                    s_v = tape.value(sv).item();
                    let sum = tape.add(sp, sv)?;
                    let weighted = tape.scale(sum, lambda2);
                    loss = tape.add(loss, weighted)?;
                }
                let surrogate = tape.value(terms.surrogate).item();
                let vloss = tape.value(terms.value_loss).item();
                let ent = tape.value(terms.entropy).item();
                let j = surrogate + tc.entropy_coef * ent - tc.value_coef * vloss;
                let grads = tape.backward(loss)?;
                let mut ag = self.actor.grads(&grads, &ap);
                let mut cg = self.critic.grads(&grads, &cp);
                let finite = tape.value(loss).is_finite()
                    && ag.iter().chain(&cg).all(Matrix::is_finite);
                if !finite {
                    return Err(self.nan_abort(epoch, mb_index, [surrogate, vloss, ent, s_pi, s_v], entries));
                }
                let objective = pse_objective(j, s_pi, s_v, lambda2)?;
                let actor_norm = clip_grad_norm(&mut ag, tc.max_grad_norm);
                let critic_norm = clip_grad_norm(&mut cg, tc.max_grad_norm);
                self.actor_opt.step(self.actor.params_mut(), &ag, tc.learning_rate)?;
                self.critic_opt.step(self.critic.params_mut(), &cg, tc.learning_rate)?;
                acc.n += 1.0;
                acc.policy_loss += -surrogate;
                acc.value_loss += vloss;
                acc.entropy += ent;
                acc.s_pi += s_pi;
                acc.s_v += s_v;
                acc.objective += objective;
                acc.actor_norm += actor_norm;
                acc.critic_norm += critic_norm;
            }
        }
        if let Coefficients::Annealed(s) = &mut self.coefficients {
            s.advance();
        }
        self.iteration += 1;
        let episodes = buffer.completed_returns.len();
        let mean_return =
            (episodes > 0).then(|| buffer.completed_returns.iter().sum::<f64>() / episodes as f64);
        let n = acc.n;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return,
            episodes,
            d: self.d,
            lambda1,
            lambda2,
            augmented: batch.applied,
            batch_size: n_entries,
            policy_loss: acc.policy_loss / n,
            value_loss: acc.value_loss / n,
            entropy: acc.entropy / n,
            s_pi: acc.s_pi / n,
            s_v: acc.s_v / n,
            objective: acc.objective / n,
            actor_grad_norm: acc.actor_norm / n,
            critic_grad_norm: acc.critic_norm / n,
        })
    }

    fn nan_abort(&self, epoch: usize, minibatch: usize, components: [f64; 5], entries: Vec<&Transition>) -> Error {
        let mut msg = format!(
            "non-finite loss at iteration {} epoch {epoch} minibatch {minibatch} \
             (surrogate, value, entropy, s_pi, s_v = {components:?})",
            self.iteration + 1
        );
        if let Some(dir) = &self.diagnostics_dir {
            let path = dir.join(format!("nan_dump_iter{}.json", self.iteration + 1));
            let dump = NanDump {
                iteration: self.iteration + 1,
                epoch,
                minibatch,
                components,
                entries,
            };
            let written = std::fs::create_dir_all(dir)
                .map_err(Error::from)
                .and_then(|_| Ok(std::fs::write(&path, serde_json::to_vec_pretty(&dump)?)?));
            match written {
                Ok(()) => msg.push_str(&format!("; minibatch dumped to {}", path.display())),
                Err(e) => msg.push_str(&format!("; dump failed: {e}")),
            }
        }
        Error::Training(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Cell, EnvState, InitialState, Targets};
    use crate::nn::Activation;

    fn small(variant: Variant) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env.grid_size = 3;
        cfg.env.horizon = 6;
        cfg.nn.hidden = vec![16];
        cfg.train.variant = variant;
        cfg.train.iterations = 4;
        cfg.train.n_envs = 2;
        cfg.train.rollout_length = 12;
        cfg.train.epochs = 2;
        cfg.train.minibatches = 2;
        cfg.pse.probes = 50;
        cfg
    }

    fn run(cfg: &RunConfig, seed: u64) -> Vec<IterationMetrics> {
        let mut t = Trainer::new(cfg, seed).unwrap();
        let mut rows = vec![];
        t.run(|_, m| {
            rows.push(m.clone());
            Ok(())
        })
        .unwrap();
        rows
    }

    #[test]
    fn pse_with_zero_d_reduces_to_mappo() {
        let base = run(&small(Variant::Mappo), 5);
        let mut cfg = small(Variant::MappoPse);
        cfg.pse.d = Some(0.0);
        assert_eq!(run(&cfg, 5), base);
        assert!(base.iter().all(|m| !m.augmented && m.s_pi == 0.0));
    }

    #[test]
    fn runs_are_reproducible() {
        for v in Variant::ALL {
            assert_eq!(run(&small(v), 9), run(&small(v), 9));
        }
    }

    #[test]
    fn se_always_augments_and_pse_anneals() {
        let se = run(&small(Variant::MappoSe), 1);
        assert!(se.iter().all(|m| m.augmented && m.lambda2 == 0.5 && m.s_pi > 0.0));
        assert!(se.iter().all(|m| m.batch_size == 48));
        let mut cfg = small(Variant::MappoPse);
        cfg.pse.d = Some(1.0);
        cfg.pse.beta1 = Some(1e-9);
        let pse = run(&cfg, 1);
        assert!(pse.iter().all(|m| m.augmented));
        assert!(pse.windows(2).all(|w| w[1].lambda2 < w[0].lambda2));
        assert_eq!(pse[0].lambda1, 1.0);
    }

    #[test]
    fn noise_free_pse_probes_full_symmetry() {
        let t = Trainer::new(&small(Variant::MappoPse), 0).unwrap();
        assert_eq!(t.d(), 1.0);
        assert_eq!(t.symmetry_report().unwrap().d_mean, 1.0);
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let cfg = small(Variant::Mappo);
        let mut t = Trainer::new(&cfg, 3).unwrap();
        let buf = t.collect().unwrap();
        let zeros = vec![0.0; buf.len()];
        let transitions = buf.transitions(&zeros, &zeros);
        let entries: Vec<&Transition> = transitions.iter().collect();
        let mb = MinibatchTensors::build(t.world(), &entries).unwrap();
        let mut tape = Tape::new();
        let ap = t.actor().bind(&mut tape);
        let (surr, _) = clipped_surrogate(&mut tape, t.actor(), &ap, &mb, 0.2).unwrap();
        let g = tape.backward(surr).unwrap();
        assert!(t.actor().grads(&g, &ap).iter().all(|m| m.norm_sq() == 0.0));
    }

    #[test]
    fn single_update_metrics_match_direct_evaluation() {
        let mut cfg = small(Variant::Mappo);
        cfg.train.epochs = 1;
        cfg.train.minibatches = 1;
        cfg.train.normalize_advantages = false;
        let mut t = Trainer::new(&cfg, 4).unwrap();
        let buf = t.collect().unwrap();
        let (actor, critic) = (t.actor().clone(), t.critic().clone());
        let (adv, ret) = compute_gae(&buf, cfg.env.gamma, cfg.train.gae_lambda);
        let m = t.update(&buf).unwrap();
        let world = t.world();
        let (mut surr, mut ent, mut vl) = (0.0, 0.0, 0.0);
        for (k, step) in buf.steps.iter().enumerate() {
            let obs = observation_matrix(world, [&step.state]).unwrap();
            let p = forward_policy(&actor, &obs).unwrap();
            for (i, a) in step.action.iter().enumerate() {
                let ratio = (p.log_probs.get(i, a.index()) - step.log_probs[i]).exp();
                surr += (ratio * adv[k]).min(ratio.clamp(0.8, 1.2) * adv[k]);
                ent -= p.row(i).iter().map(|q| q * q.ln()).sum::<f64>();
            }
            let v = critic.forward(&global_matrix(world, [&step.state]).unwrap()).unwrap().item();
            vl += (v - ret[k]).powi(2);
        }
        let rows = (buf.len() * 2) as f64;
        assert!((m.policy_loss + surr / rows).abs() < 1e-12);
        assert!((m.entropy - ent / rows).abs() < 1e-12);
        assert!((m.value_loss - vl / buf.len() as f64).abs() < 1e-12);
        let j = surr / rows + cfg.train.entropy_coef * ent / rows - cfg.train.value_coef * vl / buf.len() as f64;
        assert!((m.objective - j).abs() < 1e-12);
        assert_eq!(m.iteration, 1);
    }

    #[test]
    fn fixed_start_deterministic_policy_has_zero_std() {
        let mut cfg = small(Variant::Mappo);
        cfg.env.initial_state = InitialState::Fixed(EnvState::new(
            vec![Cell::new(0, 0), Cell::new(2, 2)],
            Targets::Landmarks(vec![Cell::new(1, 0), Cell::new(2, 1)]),
            0,
        ));
        let t = Trainer::new(&cfg, 0).unwrap();
        let r = t.evaluate(5, 11).unwrap();
        assert_eq!(r.std, 0.0);
        assert_eq!(r, t.evaluate(5, 11).unwrap());
        assert!(matches!(t.evaluate(0, 11), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_aborts_with_a_dump() {
        let mut cfg = small(Variant::Mappo);
        cfg.nn.activation = Activation::Relu;
        cfg.train.learning_rate = 1e200;
        cfg.train.max_grad_norm = 1e300;
        cfg.train.iterations = 20;
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(&cfg, 0).unwrap().with_diagnostics_dir(dir.path());
        let err = t.run(|_, _| Ok(())).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Training(_)), "{msg}");
        assert!(msg.contains("dumped to"), "{msg}");
        assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1);
    }

    #[test]
    fn checkpoint_restore_round_trip() {
        let cfg = small(Variant::Mappo);
        let a = Trainer::new(&cfg, 1).unwrap();
        let mut b = Trainer::new(&cfg, 2).unwrap();
        assert_ne!(a.actor(), b.actor());
        b.restore(&a.checkpoint()).unwrap();
        assert_eq!(a.actor(), b.actor());
        assert_eq!(a.critic(), b.critic());
    }
}
