use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::{log_softmax_rows, Matrix};
use super::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Fully connected network. Parameters are stored as `[W0, b0, W1, b1, ...]`
/// with `Wi` of shape `in×out` and `bi` of shape `1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<Matrix>,
}

impl Mlp {
    /// Scaled-uniform initialization; the output layer is scaled by `out_gain`.
    pub fn new(
        sizes: &[usize],
        activation: Activation,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(sizes, activation)?;
        let n_layers = net.n_layers();
        for layer in 0..n_layers {
            let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
            let gain = if layer + 1 == n_layers { out_gain } else { 1.0 };
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.params[2 * layer].data_mut() {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let params = sizes
            .windows(2)
            .flat_map(|w| [Matrix::zeros(w[0], w[1]), Matrix::zeros(1, w[1])])
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    /// Rebuilds a network from raw parameters, checking every shape.
    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<Matrix>) -> Result<Self> {
        let template = Mlp::zeros(sizes, activation)?;
        if params.len() != template.params.len()
            || params.iter().zip(&template.params).any(|(p, t)| p.shape() != t.shape())
        {
            return Err(Error::Shape(format!("parameters do not fit layer sizes {sizes:?}")));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Mlp { params, ..template })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Matrix::is_finite)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Plain forward pass; each row of `x` is one input.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in 0..self.n_layers() {
            h = h.matmul(&self.params[2 * layer])?;
            let b = &self.params[2 * layer + 1];
            for r in 0..h.rows() {
                h.row_mut(r).iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
            }
            if layer + 1 < self.n_layers() {
                h = match self.activation {
                    Activation::Tanh => h.map(f64::tanh),
                    Activation::Relu => h.map(|v| v.max(0.0)),
                };
            }
        }
        Ok(h)
    }

    /// Registers the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Forward pass recorded on `tape` using previously bound parameters.
    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for layer in 0..self.n_layers() {
            h = tape.matmul(h, params[2 * layer])?;
            h = tape.add_bias(h, params[2 * layer + 1])?;
            if layer + 1 < self.n_layers() {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Collects the gradients of bound parameters.
    pub fn grads(&self, grads: &Gradients, params: &[Var]) -> Vec<Matrix> {
        params.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Per-row categorical distributions produced by a policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Matrix,
    pub log_probs: Matrix,
}

impl PolicyOutput {
    pub fn n_rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.probs.row(r)
    }
}

/// Softmax head over the network's logits, one distribution per feature row.
pub fn forward_policy(net: &Mlp, features: &Matrix) -> Result<PolicyOutput> {
    let logits = net.forward(features)?;
    let log_probs = log_softmax_rows(&logits);
    Ok(PolicyOutput {
        probs: log_probs.map(f64::exp),
        log_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_is_uniform() {
        let net = Mlp::zeros(&[4, 8, 5], Activation::Tanh).unwrap();
        let out = forward_policy(&net, &Matrix::filled(2, 4, 0.3)).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn huge_logits_stay_finite() {
        let mut net = Mlp::zeros(&[1, 5], Activation::Tanh).unwrap();
        net.params_mut()[1] = Matrix::new(1, 5, vec![1000.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = forward_policy(&net, &Matrix::zeros(1, 1)).unwrap();
        assert!(out.probs.is_finite() && out.log_probs.is_finite());
        assert!((out.probs.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(out.probs.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn wrong_feature_length_is_a_shape_error() {
        let net = Mlp::zeros(&[4, 5], Activation::Tanh).unwrap();
        assert!(matches!(forward_policy(&net, &Matrix::zeros(1, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn frozen_random_net_golden_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Mlp::new(&[3, 4, 5], Activation::Tanh, 1.0, &mut rng).unwrap();
        let x = Matrix::new(1, 3, vec![0.5, -0.25, 1.0]).unwrap();
        let out = forward_policy(&net, &x).unwrap();
        let sum: f64 = out.probs.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for (p, g) in out.probs.data().iter().zip(GOLDEN_POLICY) {
            assert!((p - g).abs() < 1e-12, "{:?}", out.probs.data());
        }
    }

    const GOLDEN_POLICY: [f64; 5] = [
        0.3261716029606509,
        0.2048550671051532,
        0.22514966255431318,
        0.12819643701507016,
        0.11562723036481275,
    ];

    #[test]
    fn taped_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(&[3, 6, 6, 2], act, 1.0, &mut rng).unwrap();
            let x = Matrix::new(2, 3, vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap();
            let mut tape = Tape::new();
            let p = net.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let y = net.forward_on(&mut tape, &p, xv).unwrap();
            assert_eq!(tape.value(y), &net.forward(&x).unwrap());
        }
    }

    #[test]
    fn half_squared_norm_gradient_is_the_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::new(&[2, 3, 1], Activation::Tanh, 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let mut terms = Vec::new();
        for &v in &p {
            let sq = tape.square(v);
            terms.push(tape.sum(sq));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t).unwrap();
        }
        let loss = tape.scale(total, 0.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(net.grads(&g, &p), net.params().to_vec());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let c = tape.constant(Matrix::scalar(4.0));
        let loss = tape.mean(c);
        let g = tape.backward(loss).unwrap();
        assert!(net.grads(&g, &p).iter().all(|m| m.norm_sq() == 0.0));
    }

    #[test]
    fn from_params_checks_shapes() {
        let net = Mlp::zeros(&[2, 3, 1], Activation::Tanh).unwrap();
        let mut bad = net.params().to_vec();
        bad.pop();
        assert!(Mlp::from_params(&[2, 3, 1], Activation::Tanh, bad).is_err());
        assert!(Mlp::from_params(&[2, 3, 1], Activation::Tanh, net.params().to_vec()).is_ok());
    }
}
