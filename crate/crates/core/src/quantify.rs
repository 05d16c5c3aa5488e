//! Symmetry quantification: the D metric, twin-rollout probing and a
//! kernel two-sample (MMD) estimator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvState, Environment, JointAction, N_ACTIONS};
use crate::error::{Error, Result};
use crate::groups::TransformPair;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_PROBES: usize = 1000;

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `1 − ½‖u − v‖² / (‖u‖² + ‖v‖²)`, with `D(0, 0) = 1`.
pub fn d_metric(gs_next: &[f64], s_bar_next: &[f64]) -> Result<f64> {
    if gs_next.len() != s_bar_next.len() {
        return Err(Error::Shape(format!(
            "d_metric on vectors of length {} and {}",
            gs_next.len(),
            s_bar_next.len()
        )));
    }
    let denom = sq_norm(gs_next) + sq_norm(s_bar_next);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - 0.5 * sq_dist(gs_next, s_bar_next) / denom).clamp(0.0, 1.0))
}

/// Result of a kernel two-sample test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Unbiased MMD² estimate; may be negative.
    pub mmd2: f64,
    /// `sqrt(max(mmd2, 0))`.
    pub mmd: f64,
    pub bandwidth: f64,
}

const MEDIAN_SUBSAMPLE: usize = 1000;

/// Median pairwise distance over (a prefix of) the pooled samples.
pub fn median_heuristic(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = p
        .iter()
        .take(MEDIAN_SUBSAMPLE / 2)
        .chain(q.iter().take(MEDIAN_SUBSAMPLE / 2))
        .collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Unbiased Gaussian-kernel MMD² between two sample sets. Without an explicit
/// bandwidth the median heuristic is used.
pub fn mmd_estimate(p: &[Vec<f64>], q: &[Vec<f64>], bandwidth: Option<f64>) -> Result<MmdEstimate> {
    if p.len() < 2 || q.len() < 2 {
        return Err(Error::Config("mmd needs at least two samples per side".into()));
    }
    let dim = p[0].len();
    if p.iter().chain(q).any(|x| x.len() != dim) {
        return Err(Error::Shape("mmd samples differ in dimension".into()));
    }
    let sigma = bandwidth.unwrap_or_else(|| median_heuristic(p, q));
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("bandwidth must be positive, got {sigma}")));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();
    let within = |xs: &[Vec<f64>]| {
        let mut s = 0.0;
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                s += k(&xs[i], &xs[j]);
            }
        }
        2.0 * s / (xs.len() * (xs.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in p {
        for y in q {
            cross += k(x, y);
        }
    }
    let mmd2 = within(p) + within(q) - 2.0 * cross / (p.len() * q.len()) as f64;
    Ok(MmdEstimate {
        mmd2,
        mmd: mmd2.max(0.0).sqrt(),
        bandwidth: sigma,
    })
}

/// One twin-rollout comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub s: EnvState,
    pub a: JointAction,
    pub s_next: EnvState,
    pub element: String,
    pub gs_next: EnvState,
    pub s_bar_next: EnvState,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    /// Partial symmetry.
    C1,
    /// Non-symmetry.
    C2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSummary {
    pub element: String,
    pub n_probes: usize,
    pub d_mean: f64,
    pub d_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub d_mean: f64,
    pub d_std: f64,
    pub n_probes: usize,
    pub tau: f64,
    pub category: Category,
    /// False when single-sample comparisons are noisy even under exact symmetry.
    pub deterministic_dynamics: bool,
    pub seed: u64,
    pub per_element: Vec<ElementSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SymmetryReport {
    pub fn from_records(records: &[ProbeRecord], tau: f64, deterministic: bool, seed: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("no probe records".into()));
        }
        let ds: Vec<f64> = records.iter().map(|r| r.d).collect();
        let (d_mean, d_std) = mean_std(&ds);
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in records {
            groups.entry(&r.element).or_default().push(r.d);
        }
        let per_element = groups
            .into_iter()
            .map(|(element, ds)| {
                let (d_mean, d_std) = mean_std(&ds);
                ElementSummary {
                    element: element.to_string(),
                    n_probes: ds.len(),
                    d_mean,
                    d_std,
                }
            })
            .collect();
        Ok(SymmetryReport {
            d_mean,
            d_std,
            n_probes: records.len(),
            tau,
            category: if d_mean >= tau { Category::C1 } else { Category::C2 },
            deterministic_dynamics: deterministic,
            seed,
            per_element,
        })
    }
}

/// Largest number of uniform warm-up steps taken before a probe.
const MAX_WARMUP: usize = 12;

fn uniform_action(n_agents: usize, rng: &mut impl Rng) -> JointAction {
    JointAction::new(
        (0..n_agents)
            .map(|_| Action::ALL[rng.gen_range(0..N_ACTIONS)])
            .collect(),
    )
}

/// Runs `n_probes` twin rollouts. Probe `i` resets with seed `seed + i`,
/// takes a random number of uniform warm-up steps, then compares the observed
/// transition under `transforms[i % len]` with a replay from the transformed state.
pub fn probe_records(
    env: &mut dyn Environment,
    transforms: &[TransformPair],
    n_probes: usize,
    seed: u64,
) -> Result<Vec<ProbeRecord>> {
    if n_probes == 0 {
        return Err(Error::Config("n_probes must be at least 1".into()));
    }
    if transforms.is_empty() {
        return Err(Error::Config("no transforms to probe".into()));
    }
    let n_agents = env.n_agents();
    let warmup_cap = MAX_WARMUP.min(env.horizon().saturating_sub(1));
    let mut records = Vec::with_capacity(n_probes);
    for i in 0..n_probes {
        let probe_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        rng.set_stream(2);
        env.reset(probe_seed)?;
        for _ in 0..rng.gen_range(0..=warmup_cap) {
            env.step(&uniform_action(n_agents, &mut rng))?;
        }
        let g = &transforms[i % transforms.len()];
        let s = env.state().clone();
        let a = uniform_action(n_agents, &mut rng);
        let s_next = env.step(&a)?.state;
        let gs_next = g.transform_state(&s_next)?;
        env.set_state(g.transform_state(&s)?)?;
        let s_bar_next = env.step(&g.transform_action(&a)?)?.state;
        let d = d_metric(&env.encode(&gs_next), &env.encode(&s_bar_next))?;
        records.push(ProbeRecord {
            s,
            a,
            s_next,
            element: g.element().label(),
            gs_next,
            s_bar_next,
            d,
        });
    }
    Ok(records)
}

/// Probes and aggregates into a [`SymmetryReport`].
pub fn probe(
    env: &mut dyn Environment,
    transforms: &[TransformPair],
    n_probes: usize,
    tau: f64,
    seed: u64,
) -> Result<SymmetryReport> {
    let records = probe_records(env, transforms, n_probes, seed)?;
    SymmetryReport::from_records(&records, tau, env.is_deterministic(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, GridEnv, GridWorld, StepOutcome};
    use crate::groups::{Group, GroupConfig, GroupElement};
    use proptest::{collection, prop_assert, prop_assert_eq, prop_oneof, proptest};
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    #[test]
    fn d_metric_hand_values() {
        assert_eq!(d_metric(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_eq!(d_metric(&[0.3, -2.0], &[-0.3, 2.0]).unwrap(), 0.0);
        assert!((d_metric(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(d_metric(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(d_metric(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn d_metric_range_symmetry_and_scale(
            u in collection::vec(-10.0f64..10.0, 4),
            v in collection::vec(-10.0f64..10.0, 4),
            c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        ) {
            let d = d_metric(&u, &v).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, d_metric(&v, &u).unwrap());
            let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
            let cv: Vec<f64> = v.iter().map(|x| c * x).collect();
            prop_assert!((d - d_metric(&cu, &cv).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_identical_samples_is_non_positive() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, (i % 3) as f64]).collect();
        let est = mmd_estimate(&xs, &xs, None).unwrap();
        assert!(est.mmd2 <= 0.0);
        assert_eq!(est.mmd, 0.0);
    }

    #[test]
    fn mmd_point_masses_with_tiny_bandwidth() {
        let p = vec![vec![0.0, 0.0]; 5];
        let q = vec![vec![3.0, 4.0]; 5];
        let est = mmd_estimate(&p, &q, Some(0.1)).unwrap();
        let k = (-25.0f64 / (2.0 * 0.01)).exp();
        assert!((est.mmd2 - 2.0 * (1.0 - k)).abs() < 1e-12);
        assert!((est.mmd2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mmd_rejects_zero_bandwidth() {
        let p = vec![vec![1.0]; 3];
        assert!(matches!(mmd_estimate(&p, &p, Some(0.0)), Err(Error::Config(_))));
        // all points equal: the median heuristic collapses to zero
        assert!(matches!(mmd_estimate(&p, &p, None), Err(Error::Config(_))));
    }

    #[test]
    fn mmd_same_distribution_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
                .collect()
        };
        let (p, q) = (draw(10_000), draw(10_000));
        let est = mmd_estimate(&p, &q, None).unwrap();
        assert!(est.mmd2 <= 0.01, "{est:?}");
    }

    fn env(noise: u32) -> GridEnv {
        let world = GridWorld::new(EnvConfig {
            noise_level: noise,
            ..EnvConfig::default()
        })
        .unwrap();
        GridEnv::new(Arc::new(world), 0).unwrap()
    }

    fn all_transforms(n: usize) -> Vec<TransformPair> {
        Group::new(&GroupConfig::default(), 2)
            .unwrap()
            .non_identity_transforms(n)
    }

    #[test]
    fn noise_free_probe_is_perfectly_symmetric() {
        let mut e = env(0);
        let report = probe(&mut e, &all_transforms(5), 200, DEFAULT_TAU, 3).unwrap();
        assert_eq!(report.d_mean, 1.0);
        assert_eq!(report.category, Category::C1);
        assert!(report.deterministic_dynamics);
        assert_eq!(report.per_element.len(), 7);
    }

    #[test]
    fn identity_probe_is_one_on_deterministic_env() {
        let mut e = env(0);
        let id = vec![TransformPair::new(GroupElement::identity(4, 2), 5)];
        assert_eq!(probe(&mut e, &id, 50, DEFAULT_TAU, 0).unwrap().d_mean, 1.0);
    }

    #[test]
    fn probe_is_deterministic() {
        let run = || probe(&mut env(4), &all_transforms(5), 100, DEFAULT_TAU, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&run()).unwrap(),
            serde_json::to_string(&run()).unwrap()
        );
    }

    #[test]
    fn mid_noise_sits_between_the_extremes() {
        let d = |noise| probe(&mut env(noise), &all_transforms(5), 1000, DEFAULT_TAU, 1).unwrap().d_mean;
        let (d0, d4, d8) = (d(0), d(4), d(8));
        assert!(d0 > d4 && d4 > d8, "{d0} {d4} {d8}");
    }

    struct Frozen(GridEnv);

    impl Environment for Frozen {
        fn reset(&mut self, seed: u64) -> Result<EnvState> {
            self.0.reset(seed)
        }
        fn state(&self) -> &EnvState {
            self.0.state()
        }
        fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
            self.0.step(action)
        }
        fn encode(&self, state: &EnvState) -> Vec<f64> {
            self.0.encode(state)
        }
        fn n_agents(&self) -> usize {
            self.0.n_agents()
        }
        fn horizon(&self) -> usize {
            self.0.horizon()
        }
        fn is_deterministic(&self) -> bool {
            true
        }
    }

    #[test]
    fn env_without_set_state_is_a_capability_error() {
        let mut e = Frozen(env(0));
        assert!(matches!(
            probe(&mut e, &all_transforms(5), 1, DEFAULT_TAU, 0),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn zero_probes_rejected() {
        assert!(probe(&mut env(0), &all_transforms(5), 0, DEFAULT_TAU, 0).is_err());
    }
}
