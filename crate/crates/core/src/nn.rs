//! Multi-layer perceptrons.
//!
//! A [`DenseNetSpec`] `[width, hidden, activation]` describes `hidden`
//! activated layers of `width` neurons followed by a linear output layer.
//! The same type backs the emulator, the variational encoder, the decoder
//! and the scale/translation subnets of every coupling layer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
        }
    }

    fn apply_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => tape.relu(v),
            Activation::Silu => tape.silu(v),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "silu" | "swish" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub input_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub output_dim: usize,
}

impl DenseNetSpec {
    pub fn new(
        input_dim: usize,
        width: usize,
        hidden_layers: usize,
        activation: Activation,
        output_dim: usize,
    ) -> Self {
        Self {
            input_dim,
            width,
            hidden_layers,
            activation,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidArgument(
                "dense net width must be at least 1".into(),
            ));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "dense net input/output dims must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.width));
            prev = self.width;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// The dimension-free part of a [`DenseNetSpec`], as written in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl MlpShape {
    pub fn new(width: usize, hidden_layers: usize, activation: Activation) -> Self {
        Self {
            width,
            hidden_layers,
            activation,
        }
    }

    pub fn spec(&self, input_dim: usize, output_dim: usize) -> DenseNetSpec {
        DenseNetSpec::new(
            input_dim,
            self.width,
            self.hidden_layers,
            self.activation,
            output_dim,
        )
    }
}

/// A dense network with its weights.
///
/// Weights are stored `fan_in × fan_out` so a batch `x` (rows = samples)
/// maps through `x·W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    spec: DenseNetSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl DenseNet {
    /// Xavier-uniform weights, zero biases.
    pub fn new(spec: DenseNetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-limit, limit))
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: DenseNetSpec) -> Result<Self> {
        spec.validate()?;
        let (weights, biases) = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| (Tensor::zeros(&[i, o]), Tensor::zeros(&[1, o])))
            .unzip();
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// Zeroes the output layer so the net starts as the constant 0.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].data_mut().fill(0.0);
        self.biases[last].data_mut().fill(0.0);
    }

    pub fn spec(&self) -> &DenseNetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(Tensor::numel)
            .sum()
    }

    /// Parameters in a fixed order: `W₀, b₀, W₁, b₁, …`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Inference pass without a tape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::shape(
                "dense_forward",
                format!("[n, {}]", self.spec.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        let n_layers = self.weights.len();
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.matmul(w);
            let c = z.cols();
            let act = if l + 1 < n_layers {
                self.spec.activation
            } else {
                Activation::Identity
            };
            for (i, v) in z.data_mut().iter_mut().enumerate() {
                *v = act.apply(*v + b.data()[i % c]);
            }
            h = z;
        }
        Ok(h)
    }

    /// Places the parameters on `tape` as trainable leaves (same order as
    /// [`DenseNet::params`]).
    pub fn tape_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.param(p.clone()))
            .collect()
    }

    /// Places the parameters on `tape` as constants (frozen network).
    pub fn tape_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect()
    }

    /// Taped forward pass using parameter handles from [`DenseNet::tape_params`].
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Var {
        assert_eq!(
            params.len(),
            2 * self.weights.len(),
            "parameter handle count"
        );
        let n_layers = self.weights.len();
        let mut h = x;
        for l in 0..n_layers {
            let z = tape.matmul(h, params[2 * l]);
            let z = tape.add_row(z, params[2 * l + 1]);
            h = if l + 1 < n_layers {
                self.spec.activation.apply_tape(tape, z)
            } else {
                z
            };
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_output_bias() {
        let spec = DenseNetSpec::new(3, 4, 2, Activation::Silu, 2);
        let mut net = DenseNet::zeros(spec).unwrap();
        net.biases_mut()[2] = Tensor::row_vector(&[1.5, -2.0]);
        let y = net
            .forward(&Tensor::matrix(2, 3, vec![1., 2., 3., -1., 0., 4.]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn identity_activation_composes_to_hand_affine_map() {
        let spec = DenseNetSpec::new(2, 2, 1, Activation::Identity, 1);
        let mut net = DenseNet::zeros(spec).unwrap();
        net.weights_mut()[0] = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        net.biases_mut()[0] = Tensor::row_vector(&[0.5, -0.5]);
        net.weights_mut()[1] = Tensor::matrix(2, 1, vec![2., -1.]).unwrap();
        net.biases_mut()[1] = Tensor::row_vector(&[0.25]);
        // x = [1, 1]: hidden = [1+3+0.5, 2+4-0.5] = [4.5, 5.5]; out = 9 - 5.5 + 0.25
        let y = net.forward(&Tensor::row_vector(&[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.75]);
    }

    #[test]
    fn relu_with_negative_preactivations_returns_output_bias() {
        let spec = DenseNetSpec::new(2, 3, 1, Activation::Relu, 1);
        let mut net = DenseNet::zeros(spec).unwrap();
        net.weights_mut()[0] = Tensor::full(&[2, 3], 1.0);
        net.biases_mut()[0] = Tensor::full(&[1, 3], -10.0);
        net.weights_mut()[1] = Tensor::full(&[3, 1], 7.0);
        net.biases_mut()[1] = Tensor::row_vector(&[0.125]);
        let y = net.forward(&Tensor::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.125]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = DenseNet::zeros(DenseNetSpec::new(3, 2, 1, Activation::Relu, 1)).unwrap();
        assert!(net.forward(&Tensor::row_vector(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn zero_hidden_layers_is_affine() {
        let spec = DenseNetSpec::new(2, 5, 0, Activation::Silu, 1);
        let mut net = DenseNet::zeros(spec).unwrap();
        assert_eq!(net.weights().len(), 1);
        net.weights_mut()[0] = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
        let y = net.forward(&Tensor::row_vector(&[1.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[-1.0]);
    }

    #[test]
    fn tape_forward_matches_inference() {
        let mut rng = Rng::new(1);
        let net = DenseNet::new(DenseNetSpec::new(3, 6, 3, Activation::Silu, 2), &mut rng).unwrap();
        let x = rng.gaussian_matrix(5, 3);
        let mut tape = Tape::new();
        let p = net.tape_params(&mut tape);
        let xv = tape.constant(x.clone());
        let y = net.forward_tape(&mut tape, &p, xv);
        assert_eq!(tape.value(y), &net.forward(&x).unwrap());
    }
}
