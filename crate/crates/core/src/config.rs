//! Run configuration: one JSON document with `env`, `group`, `nn`, `train`,
//! `pse` and `eval` sections. Every field has a default, and the resolved
//! document is what gets hashed and written into run manifests.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::groups::GroupConfig;
use crate::nn::{Activation, AdamConfig};
use crate::pse::KlDirection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "mappo")]
    Mappo,
    #[serde(rename = "mappo-se")]
    MappoSe,
    #[serde(rename = "mappo-pse")]
    MappoPse,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Mappo, Variant::MappoSe, Variant::MappoPse];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mappo => "mappo",
            Variant::MappoSe => "mappo-se",
            Variant::MappoPse => "mappo-pse",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected mappo, mappo-se or mappo-pse)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Initial scale of the policy output layer.
    pub actor_out_gain: f64,
    pub critic_out_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            actor_out_gain: 0.01,
            critic_out_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Total iterations `K_total`.
    pub iterations: u64,
    pub n_envs: usize,
    /// Steps per environment per iteration.
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::MappoPse,
            iterations: 2000,
            n_envs: 4,
            rollout_length: 50,
            epochs: 4,
            minibatches: 4,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 5e-4,
            max_grad_norm: 10.0,
            normalize_advantages: true,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseConfig {
    /// Fixed symmetry degree; probed before training when absent.
    pub d: Option<f64>,
    /// Augmentation decay; `1 / iterations` when absent.
    pub beta1: Option<f64>,
    /// Consistency-loss decay; `1 / iterations` when absent.
    pub beta2: Option<f64>,
    /// Category threshold: below it the environment counts as non-symmetric and `D` is treated as 0.
    pub tau: f64,
    pub kl_direction: KlDirection,
    pub stop_gradient_target: bool,
    /// Fixed consistency weight of the `mappo-se` variant.
    pub se_coefficient: f64,
    pub probes: usize,
    /// Re-probe `D` every this many iterations.
    pub requantify_every: Option<u64>,
}

impl Default for PseConfig {
    fn default() -> Self {
        PseConfig {
            d: None,
            beta1: None,
            beta2: None,
            tau: 0.5,
            kl_direction: KlDirection::TransformedFirst,
            stop_gradient_target: false,
            se_coefficient: 0.5,
            probes: 1000,
            requantify_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub group: GroupConfig,
    pub nn: NetConfig,
    pub train: TrainConfig,
    pub pse: PseConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the git blob framing of the compact resolved JSON.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(&body);
        hex::encode(h.finalize())
    }

    pub fn beta1(&self) -> f64 {
        self.pse.beta1.unwrap_or(1.0 / self.train.iterations as f64)
    }

    pub fn beta2(&self) -> f64 {
        self.pse.beta2.unwrap_or(1.0 / self.train.iterations as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        let t = &self.train;
        if t.iterations == 0 {
            return fail("train.iterations must be at least 1");
        }
        if t.n_envs == 0 || t.rollout_length == 0 || t.epochs == 0 || t.minibatches == 0 {
            return fail("train.n_envs, rollout_length, epochs and minibatches must be at least 1");
        }
        if t.minibatches > t.n_envs * t.rollout_length {
            return fail("train.minibatches exceeds the number of collected steps");
        }
        if !(t.clip_ratio > 0.0 && t.clip_ratio < 1.0) {
            return fail("train.clip_ratio must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&t.gae_lambda) {
            return fail("train.gae_lambda must lie in [0, 1]");
        }
        if !(t.learning_rate > 0.0) || !(t.max_grad_norm > 0.0) {
            return fail("train.learning_rate and max_grad_norm must be positive");
        }
        if t.entropy_coef < 0.0 || t.value_coef < 0.0 {
            return fail("loss coefficients must be non-negative");
        }
        if self.nn.hidden.contains(&0) {
            return fail("nn.hidden sizes must be positive");
        }
        let p = &self.pse;
        if let Some(d) = p.d {
            if !(0.0..=1.0).contains(&d) {
                return fail("pse.d must lie in [0, 1]");
            }
        }
        if [p.beta1, p.beta2].iter().flatten().any(|b| !(*b > 0.0)) {
            return fail("pse.beta1 and pse.beta2 must be positive");
        }
        if !(0.0..=1.0).contains(&p.tau) || !(0.0..=1.0).contains(&p.se_coefficient) {
            return fail("pse.tau and pse.se_coefficient must lie in [0, 1]");
        }
        if p.probes == 0 || p.requantify_every == Some(0) {
            return fail("pse.probes and pse.requantify_every must be at least 1");
        }
        if self.eval.episodes == 0 {
            return fail("eval.episodes must be at least 1");
        }
        crate::groups::Group::new(&self.group, self.env.n_agents)?;
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
