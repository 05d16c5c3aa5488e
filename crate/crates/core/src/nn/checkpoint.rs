use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::mlp::{Activation, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON form of one network: a layer-size header followed by flattened
/// row-major parameters in `[W0, b0, W1, b1, ...]` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDump {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<Vec<f64>>,
}

impl From<&Mlp> for MlpDump {
    fn from(net: &Mlp) -> Self {
        MlpDump {
            layer_sizes: net.sizes().to_vec(),
            activation: net.activation(),
            params: net.params().iter().map(|p| p.data().to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpDump> for Mlp {
    type Error = Error;

    fn try_from(dump: MlpDump) -> Result<Mlp> {
        let template = Mlp::zeros(&dump.layer_sizes, dump.activation)?;
        if dump.params.len() != template.params().len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                template.params().len(),
                dump.params.len()
            )));
        }
        let params = dump
            .params
            .into_iter()
            .zip(template.params())
            .map(|(data, t)| Matrix::new(t.rows(), t.cols(), data))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_params(&dump.layer_sizes, dump.activation, params)
    }
}

/// Actor and critic saved together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    pub actor: MlpDump,
    pub critic: MlpDump,
}

impl Checkpoint {
    pub fn new(iteration: u64, actor: &Mlp, critic: &Mlp) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration,
            actor: actor.into(),
            critic: critic.into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn networks(&self) -> Result<(Mlp, Mlp)> {
        Ok((self.actor.clone().try_into()?, self.critic.clone().try_into()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = Mlp::new(&[4, 8, 5], Activation::Tanh, 0.01, &mut rng).unwrap();
        let critic = Mlp::new(&[6, 8, 1], Activation::Relu, 1.0, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(12, &actor, &critic).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.iteration, 12);
        assert_eq!(loaded.networks().unwrap(), (actor, critic));
    }

    #[test]
    fn mismatched_header_is_rejected() {
        let net = Mlp::zeros(&[2, 3], Activation::Tanh).unwrap();
        let mut dump = MlpDump::from(&net);
        dump.layer_sizes = vec![3, 3];
        assert!(Mlp::try_from(dump).is_err());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let net = Mlp::zeros(&[2, 3], Activation::Tanh).unwrap();
        let mut ckpt = Checkpoint::new(0, &net, &net);
        ckpt.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Config(_))));
    }
}
