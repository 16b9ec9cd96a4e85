//! Real-NVP normalizing flows.
//!
//! A [`FlowStack`] is a bijection between a standard-normal base variable
//! `z₀` and the (standardized) data `z_K`. Sampling runs the layers forward,
//! density evaluation runs them in reverse and collects the log-Jacobians.
//!
//! Each [`CouplingLayer`] splits the `m` coordinates into a pass-through
//! block and an active block and maps
//!
//! ```text
//! z'_active = z_active ⊙ exp(s(z_pass)) + t(z_pass)
//! ```
//!
//! with `s = 8·tanh(raw/8)` to keep the exponent bounded. Successive layers
//! swap the roles of the two blocks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::emulator::{epoch_batches, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, DenseNetSpec};
use crate::normalize::NormalizationStats;
use crate::optim::{lr_at, AdamState};
use crate::rng::Rng;
use crate::tensor::Tensor;

const SCALE_BOUND: f64 = 8.0;

/// Architecture of a flow: `couplings` layers whose `s` and `t` subnets are
/// `[width, hidden_layers, activation]` MLPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub width: usize,
    pub hidden_layers: usize,
    pub couplings: usize,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl FlowSpec {
    pub fn new(width: usize, hidden_layers: usize, couplings: usize) -> Self {
        Self {
            width,
            hidden_layers,
            couplings,
            batch_norm: false,
            activation: default_activation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    dim: usize,
    parity: u8,
    s_net: DenseNet,
    t_net: DenseNet,
}

fn bound_scale(raw: f64) -> f64 {
    SCALE_BOUND * (raw / SCALE_BOUND).tanh()
}

impl CouplingLayer {
    /// Random subnets with zeroed output layers, so the layer starts as the
    /// identity.
    pub fn new(
        dim: usize,
        parity: u8,
        width: usize,
        hidden: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (pass, active) = Self::block_dims(dim, parity)?;
        let spec = DenseNetSpec::new(pass, width, hidden, act, active);
        let mut s_net = DenseNet::new(spec.clone(), rng)?;
        let mut t_net = DenseNet::new(spec, rng)?;
        s_net.zero_output_layer();
        t_net.zero_output_layer();
        Self::from_nets(dim, parity, s_net, t_net)
    }

    pub fn from_nets(dim: usize, parity: u8, s_net: DenseNet, t_net: DenseNet) -> Result<Self> {
        let (pass, active) = Self::block_dims(dim, parity)?;
        for net in [&s_net, &t_net] {
            if net.input_dim() != pass || net.output_dim() != active {
                return Err(Error::shape(
                    "coupling subnet",
                    format!("{pass} → {active}"),
                    format!("{} → {}", net.input_dim(), net.output_dim()),
                ));
            }
        }
        Ok(Self {
            dim,
            parity,
            s_net,
            t_net,
        })
    }

    /// `(pass, active)` block sizes. With `p = ⌈m/2⌉`, parity 0 passes the
    /// first `p` coordinates and parity 1 passes the last `m − p`.
    fn block_dims(dim: usize, parity: u8) -> Result<(usize, usize)> {
        if dim < 2 || parity > 1 {
            return Err(Error::InvalidArgument(format!(
                "coupling needs dim ≥ 2 and parity 0/1, got {dim}/{parity}"
            )));
        }
        let p = dim.div_ceil(2);
        Ok(if parity == 0 {
            (p, dim - p)
        } else {
            (dim - p, p)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parity(&self) -> u8 {
        self.parity
    }

    /// Number of pass-through coordinates `m*`.
    pub fn pass_dim(&self) -> usize {
        self.s_net.input_dim()
    }

    pub fn pass_range(&self) -> std::ops::Range<usize> {
        let p = self.dim.div_ceil(2);
        if self.parity == 0 {
            0..p
        } else {
            p..self.dim
        }
    }

    pub fn active_range(&self) -> std::ops::Range<usize> {
        let p = self.dim.div_ceil(2);
        if self.parity == 0 {
            p..self.dim
        } else {
            0..p
        }
    }

    pub fn s_net(&self) -> &DenseNet {
        &self.s_net
    }

    pub fn t_net(&self) -> &DenseNet {
        &self.t_net
    }

    pub fn s_net_mut(&mut self) -> &mut DenseNet {
        &mut self.s_net
    }

    pub fn t_net_mut(&mut self) -> &mut DenseNet {
        &mut self.t_net
    }

    fn check(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.cols() != self.dim {
            return Err(Error::shape(
                "coupling",
                format!("[n, {}]", self.dim),
                format!("{:?}", z.shape()),
            ));
        }
        Ok(())
    }

    fn scale_shift(&self, pass: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = self.s_net.forward(pass)?.map(bound_scale);
        let t = self.t_net.forward(pass)?;
        if !s.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite {
                op: "coupling scale/shift".into(),
                node: None,
            });
        }
        Ok((s, t))
    }

    fn assemble(&self, pass: &Tensor, active: &Tensor) -> Tensor {
        if self.parity == 0 {
            pass.concat_cols(active)
        } else {
            active.concat_cols(pass)
        }
    }

    /// `z → z'` and `log|det ∂z'/∂z| = Σ s` per row.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(z)?;
        let (pr, ar) = (self.pass_range(), self.active_range());
        let pass = z.slice_cols(pr.start, pr.end);
        let (s, t) = self.scale_shift(&pass)?;
        let mut active = z.slice_cols(ar.start, ar.end);
        for ((a, sv), tv) in active.data_mut().iter_mut().zip(s.data()).zip(t.data()) {
            *a = *a * sv.exp() + tv;
        }
        let logdet = s.iter_rows().map(|r| r.iter().sum()).collect();
        Ok((self.assemble(&pass, &active), logdet))
    }

    /// `z' → z` and `log|det ∂z/∂z'| = −Σ s` per row.
    pub fn inverse_with_logdet(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(z)?;
        let (pr, ar) = (self.pass_range(), self.active_range());
        let pass = z.slice_cols(pr.start, pr.end);
        let (s, t) = self.scale_shift(&pass)?;
        let mut active = z.slice_cols(ar.start, ar.end);
        for ((a, sv), tv) in active.data_mut().iter_mut().zip(s.data()).zip(t.data()) {
            *a = (*a - tv) * (-sv).exp();
        }
        let logdet = s.iter_rows().map(|r| -r.iter().sum::<f64>()).collect();
        Ok((self.assemble(&pass, &active), logdet))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.inverse_with_logdet(z)?.0)
    }

    /// Taped inverse; returns `(z, n × 1 log-det)`.
    fn inverse_tape(&self, tape: &mut Tape, params: &[Var], z: Var) -> (Var, Var) {
        let ns = 2 * self.s_net.weights().len();
        let (pr, ar) = (self.pass_range(), self.active_range());
        let pass = tape.slice_cols(z, pr.start, pr.end);
        let active = tape.slice_cols(z, ar.start, ar.end);
        let raw = self.s_net.forward_tape(tape, &params[..ns], pass);
        let u = tape.scale(raw, 1.0 / SCALE_BOUND);
        let th = tape.tanh(u);
        let s = tape.scale(th, SCALE_BOUND);
        let t = self.t_net.forward_tape(tape, &params[ns..], pass);
        let shifted = tape.sub(active, t);
        let neg_s = tape.scale(s, -1.0);
        let e = tape.exp(neg_s);
        let prev = tape.mul(shifted, e);
        let sums = tape.sum_cols(s);
        let logdet = tape.scale(sums, -1.0);
        let out = if self.parity == 0 {
            tape.concat_cols(pass, prev)
        } else {
            tape.concat_cols(prev, pass)
        };
        (out, logdet)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.s_net.params_mut();
        p.extend(self.t_net.params_mut());
        p
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.s_net.params();
        p.extend(self.t_net.params());
        p
    }
}

/// Batch normalization as a bijection (data → base direction):
/// `u = (x − μ)/√(σ² + ε) ⊙ exp(log γ) + β`.
///
/// Training uses batch moments and updates running moments; evaluation and
/// sampling use the running moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    log_gamma: Tensor,
    beta: Tensor,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            log_gamma: Tensor::zeros(&[1, dim]),
            beta: Tensor::zeros(&[1, dim]),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn scale(&self) -> Vec<f64> {
        self.running_var
            .iter()
            .zip(self.log_gamma.data())
            .map(|(v, lg)| lg.exp() / (v + self.eps).sqrt())
            .collect()
    }

    /// Data → base with running moments.
    fn to_base(&self, x: &Tensor) -> (Tensor, f64) {
        let sc = self.scale();
        let c = x.cols();
        let mut u = x.clone();
        for (i, v) in u.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.running_mean[j]) * sc[j] + self.beta.data()[j];
        }
        (u, sc.iter().map(|s| s.ln()).sum())
    }

    fn from_base(&self, u: &Tensor) -> Tensor {
        let sc = self.scale();
        let c = u.cols();
        let mut x = u.clone();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.beta.data()[j]) / sc[j] + self.running_mean[j];
        }
        x
    }

    /// Taped data → base with batch moments; returns `(u, 1 × 1 log-det)`
    /// and the batch moments for the running update.
    fn to_base_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
    ) -> (Var, Var, Vec<f64>, Vec<f64>) {
        let mean = tape.mean_rows(x);
        let neg_mean = tape.scale(mean, -1.0);
        let centred = tape.add_row(x, neg_mean);
        let sq = tape.square(centred);
        let var = tape.mean_rows(sq);
        let var_eps = tape.add_scalar(var, self.eps);
        let log_var = tape.log(var_eps);
        let half = tape.scale(log_var, -0.5);
        let log_scale = tape.add(half, params[0]);
        let scale = tape.exp(log_scale);
        let scaled = tape.mul_row(centred, scale);
        let u = tape.add_row(scaled, params[1]);
        let logdet = tape.sum(log_scale);
        let bm = tape.value(mean).data().to_vec();
        let bv = tape.value(var).data().to_vec();
        (u, logdet, bm, bv)
    }

    fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..mean.len() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlowLayer {
    Coupling(CouplingLayer),
    BatchNorm(BatchNormLayer),
}

/// Stack of couplings (optionally interleaved with batch normalization)
/// plus the standardization of the data it was fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStack {
    data_dim: usize,
    augment: usize,
    layers: Vec<FlowLayer>,
    stats: NormalizationStats,
}

/// `log N(z; 0, I)` per row.
pub fn standard_normal_log_pdf(z: &Tensor) -> Vec<f64> {
    let c = 0.5 * z.cols() as f64 * (2.0 * PI).ln();
    z.iter_rows()
        .map(|r| -0.5 * r.iter().map(|x| x * x).sum::<f64>() - c)
        .collect()
}

impl FlowStack {
    /// Identity-initialized flow over `data_dim + augment` coordinates.
    pub fn new(
        data_dim: usize,
        augment: usize,
        spec: &FlowSpec,
        stats: NormalizationStats,
        rng: &mut Rng,
    ) -> Result<Self> {
        if spec.couplings < 2 {
            return Err(Error::Config(format!(
                "a flow needs at least 2 coupling layers, got {}",
                spec.couplings
            )));
        }
        if stats.dim() != data_dim {
            return Err(Error::shape("flow stats", data_dim, stats.dim()));
        }
        let dim = data_dim + augment;
        let mut layers = Vec::new();
        for k in 0..spec.couplings {
            if spec.batch_norm && k > 0 {
                layers.push(FlowLayer::BatchNorm(BatchNormLayer::new(dim)));
            }
            let c = CouplingLayer::new(
                dim,
                (k % 2) as u8,
                spec.width,
                spec.hidden_layers,
                spec.activation,
                rng,
            )?;
            layers.push(FlowLayer::Coupling(c));
        }
        Ok(Self {
            data_dim,
            augment,
            layers,
            stats,
        })
    }

    /// Flow from explicit layers (ordered base → data).
    pub fn from_layers(
        data_dim: usize,
        augment: usize,
        layers: Vec<FlowLayer>,
        stats: NormalizationStats,
    ) -> Result<Self> {
        let dim = data_dim + augment;
        for l in &layers {
            if let FlowLayer::Coupling(c) = l {
                if c.dim() != dim {
                    return Err(Error::shape("flow layer", dim, c.dim()));
                }
            }
        }
        Ok(Self {
            data_dim,
            augment,
            layers,
            stats,
        })
    }

    /// Full flow dimension, augmentation included.
    pub fn dim(&self) -> usize {
        self.data_dim + self.augment
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn augment(&self) -> usize {
        self.augment
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn couplings(&self) -> impl Iterator<Item = &CouplingLayer> {
        self.layers.iter().filter_map(|l| match l {
            FlowLayer::Coupling(c) => Some(c),
            FlowLayer::BatchNorm(_) => None,
        })
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(
                "flow input (augmentation included)",
                format!("[n, {}]", self.dim()),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Base sample `z₀` → standardized data `z_K`.
    pub fn forward(&self, z0: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(z0)?;
        let mut z = z0.clone();
        let mut logdet = vec![0.0; z.rows()];
        for layer in &self.layers {
            match layer {
                FlowLayer::Coupling(c) => {
                    let (next, ld) = c.forward(&z)?;
                    logdet.iter_mut().zip(ld).for_each(|(a, b)| *a += b);
                    z = next;
                }
                FlowLayer::BatchNorm(bn) => {
                    let (_, ld) = bn.to_base(&z);
                    z = bn.from_base(&z);
                    logdet.iter_mut().for_each(|a| *a -= ld);
                }
            }
        }
        Ok((z, logdet))
    }

    /// Standardized data → base, with `Σ log|det|` of the inverse maps.
    pub fn to_base(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(x)?;
        let mut z = x.clone();
        let mut logdet = vec![0.0; z.rows()];
        for layer in self.layers.iter().rev() {
            match layer {
                FlowLayer::Coupling(c) => {
                    let (prev, ld) = c.inverse_with_logdet(&z)?;
                    logdet.iter_mut().zip(ld).for_each(|(a, b)| *a += b);
                    z = prev;
                }
                FlowLayer::BatchNorm(bn) => {
                    let (u, ld) = bn.to_base(&z);
                    logdet.iter_mut().for_each(|a| *a += ld);
                    z = u;
                }
            }
        }
        Ok((z, logdet))
    }

    /// `log p(x)` per row for standardized `x` of full flow dimension.
    pub fn log_density(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (z0, logdet) = self.to_base(x)?;
        Ok(standard_normal_log_pdf(&z0)
            .into_iter()
            .zip(logdet)
            .map(|(a, b)| a + b)
            .collect())
    }

    /// Draws `n` standardized samples of full flow dimension.
    pub fn sample_standardized(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z0 = rng.gaussian_matrix(n, self.dim());
        Ok(self.forward(&z0)?.0)
    }

    /// Draws `n` samples in physical units with augmentation dropped.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        if n == 0 {
            return Ok(Tensor::zeros(&[0, self.data_dim]));
        }
        let x = self.sample_standardized(n, rng)?;
        self.stats.destandardize(&x.slice_cols(0, self.data_dim))
    }

    /// Parameter tensors in the order [`FlowStack::nll_tape`] expects.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                FlowLayer::Coupling(c) => c.params(),
                FlowLayer::BatchNorm(b) => vec![&b.log_gamma, &b.beta],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                FlowLayer::Coupling(c) => c.params_mut(),
                FlowLayer::BatchNorm(b) => vec![&mut b.log_gamma, &mut b.beta],
            })
            .collect()
    }

    /// Mean negative log-likelihood of standardized `x` (full flow
    /// dimension) on a tape, with `params` one leaf per [`FlowStack::params`]
    /// entry. Also returns the batch moments of every batch-norm layer in
    /// layer order.
    pub fn nll_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: &Tensor,
    ) -> Result<(Var, Vec<(Vec<f64>, Vec<f64>)>)> {
        self.check(x)?;
        if params.len() != self.params().len() {
            return Err(Error::shape(
                "flow parameters",
                self.params().len(),
                params.len(),
            ));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            let k = match l {
                FlowLayer::Coupling(c) => c.params().len(),
                FlowLayer::BatchNorm(_) => 2,
            };
            per_layer.push(&params[at..at + k]);
            at += k;
        }
        let n = x.rows() as f64;
        let mut z = tape.constant(x.clone());
        let mut row_logdet: Option<Var> = None;
        let mut scalar_logdet: Option<Var> = None;
        let mut moments = Vec::new();
        for (layer, p) in self.layers.iter().zip(&per_layer).rev() {
            match layer {
                FlowLayer::Coupling(c) => {
                    let (prev, ld) = c.inverse_tape(tape, p, z);
                    row_logdet = Some(match row_logdet {
                        Some(acc) => tape.add(acc, ld),
                        None => ld,
                    });
                    z = prev;
                }
                FlowLayer::BatchNorm(b) => {
                    let (u, ld, bm, bv) = b.to_base_tape(tape, p, z);
                    scalar_logdet = Some(match scalar_logdet {
                        Some(acc) => tape.add(acc, ld),
                        None => ld,
                    });
                    moments.push((bm, bv));
                    z = u;
                }
            }
        }
        moments.reverse();
        // −mean log p = ½·mean‖z₀‖² + const − mean(logdet)
        let sq = tape.square(z);
        let energy = tape.sum(sq);
        let mut loss = tape.scale(energy, 0.5 / n);
        if let Some(ld) = row_logdet {
            let s = tape.sum(ld);
            let s = tape.scale(s, -1.0 / n);
            loss = tape.add(loss, s);
        }
        if let Some(ld) = scalar_logdet {
            let s = tape.scale(ld, -1.0);
            loss = tape.add(loss, s);
        }
        let loss = tape.add_scalar(loss, 0.5 * self.dim() as f64 * (2.0 * PI).ln());
        Ok((loss, moments))
    }
}

#[derive(Clone, Debug)]
pub struct TrainedFlow {
    pub flow: FlowStack,
    /// Mean negative log-likelihood (standardized space) per epoch.
    pub loss_history: Vec<f64>,
}

/// Maximum-likelihood fit of a flow to `samples` (physical units).
///
/// The data are standardized first. `augment` extra coordinates are filled
/// with fresh standard-normal noise every epoch.
pub fn train_flow(
    samples: &Tensor,
    spec: &FlowSpec,
    augment: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainedFlow> {
    cfg.validate()?;
    if samples.rows() < 2 {
        return Err(Error::Data(
            "need at least two samples to fit a flow".into(),
        ));
    }
    let d = samples.cols();
    if d + augment < 2 {
        return Err(Error::Config(
            "a one-dimensional target needs at least one augmentation dimension".into(),
        ));
    }
    let stats = NormalizationStats::fit(samples, &vec![false; d])?;
    let data = stats.standardize(samples)?;
    let mut flow = FlowStack::new(d, augment, spec, stats, rng)?;
    let mut adam = AdamState::new(cfg.adam(), flow.params());
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, cfg.gamma, epoch);
        let full = if augment > 0 {
            data.concat_cols(&rng.gaussian_matrix(data.rows(), augment))
        } else {
            data.clone()
        };
        let mut total = 0.0;
        for batch in epoch_batches(full.rows(), cfg.batch_size, rng) {
            let x = full.select_rows(&batch);
            let mut tape = Tape::new();
            let leaves: Vec<Var> = flow
                .params()
                .into_iter()
                .map(|p| tape.param(p.clone()))
                .collect();
            let (loss, moments) = flow.nll_tape(&mut tape, &leaves, &x)?;
            let value = tape.value(loss).data()[0];
            let grads = tape.backward(loss).map_err(|_| Error::Diverged {
                what: "flow negative log-likelihood".into(),
                epoch,
            })?;
            let g: Vec<Tensor> = leaves
                .iter()
                .map(|&v| grads.get(v).cloned().expect("parameter gradient"))
                .collect();
            adam.step(flow.params_mut(), &g, lr)
                .map_err(|_| Error::Diverged {
                    what: "flow gradient".into(),
                    epoch,
                })?;
            let mut it = moments.into_iter();
            for layer in flow.layers.iter_mut() {
                if let FlowLayer::BatchNorm(b) = layer {
                    let (m, v) = it.next().expect("one moment pair per batch-norm layer");
                    b.update_running(&m, &v);
                }
            }
            total += value * batch.len() as f64;
        }
        let mean = total / full.rows() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                what: "flow negative log-likelihood".into(),
                epoch,
            });
        }
        loss_history.push(mean);
        if cfg.plateaued(&loss_history) {
            break;
        }
    }
    Ok(TrainedFlow { flow, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_layer(dim: usize, parity: u8, seed: u64) -> CouplingLayer {
        let mut rng = Rng::new(seed);
        let (p, a) = CouplingLayer::block_dims(dim, parity).unwrap();
        let spec = DenseNetSpec::new(p, 6, 2, Activation::Silu, a);
        let s = DenseNet::new(spec.clone(), &mut rng).unwrap();
        let t = DenseNet::new(spec, &mut rng).unwrap();
        CouplingLayer::from_nets(dim, parity, s, t).unwrap()
    }

    /// Coupling on 2 coordinates with constant `s` and zero `t`.
    fn constant_scale_layer(s: f64) -> CouplingLayer {
        let spec = DenseNetSpec::new(1, 2, 1, Activation::Relu, 1);
        let mut s_net = DenseNet::zeros(spec.clone()).unwrap();
        let raw = SCALE_BOUND * (s / SCALE_BOUND).atanh();
        s_net.biases_mut()[1] = Tensor::row_vector(&[raw]);
        CouplingLayer::from_nets(2, 0, s_net, DenseNet::zeros(spec).unwrap()).unwrap()
    }

    #[test]
    fn zero_nets_give_identity_coupling() {
        let mut rng = Rng::new(0);
        let layer = CouplingLayer::new(3, 0, 4, 2, Activation::Silu, &mut rng).unwrap();
        let z = rng.gaussian_matrix(5, 3);
        let (out, ld) = layer.forward(&z).unwrap();
        assert_eq!(out, z);
        assert!(ld.iter().all(|&x| x == 0.0));
        assert_eq!(layer.inverse(&z).unwrap(), z);
    }

    #[test]
    fn log_two_scale_doubles_active_coordinate() {
        let layer = constant_scale_layer(2f64.ln());
        let (out, ld) = layer.forward(&Tensor::row_vector(&[1.5, -3.0])).unwrap();
        assert!((out.data()[0] - 1.5).abs() < 1e-15);
        assert!((out.data()[1] + 6.0).abs() < 1e-12);
        assert!((ld[0] - 2f64.ln()).abs() < 1e-12);
        let back = layer.inverse(&Tensor::row_vector(&[1.5, -6.0])).unwrap();
        assert!((back.data()[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn masks_alternate_and_cover_every_coordinate() {
        for dim in 2..7 {
            let a = random_layer(dim, 0, 1);
            let b = random_layer(dim, 1, 2);
            let mut touched = vec![false; dim];
            for r in [a.active_range(), b.active_range()] {
                r.for_each(|i| touched[i] = true);
            }
            assert!(touched.iter().all(|&t| t), "dim {dim}");
            assert!(a.pass_dim() > 0 && a.pass_dim() < dim);
        }
    }

    #[test]
    fn random_layer_round_trip() {
        let mut rng = Rng::new(7);
        for parity in 0..2 {
            let layer = random_layer(4, parity, 3 + parity as u64);
            let z = rng.gaussian_matrix(20, 4).map(|x| 2.0 * x);
            let (fz, ld) = layer.forward(&z).unwrap();
            let (back, ild) = layer.inverse_with_logdet(&fz).unwrap();
            assert!(back.max_abs_diff(&z) < 1e-10);
            for (a, b) in ld.iter().zip(ild) {
                assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_flow_density_is_standard_normal() {
        let mut rng = Rng::new(1);
        let flow = FlowStack::new(
            2,
            1,
            &FlowSpec::new(5, 2, 4),
            NormalizationStats::identity(2),
            &mut rng,
        )
        .unwrap();
        let x = rng.gaussian_matrix(10, 3);
        assert_eq!(flow.log_density(&x).unwrap(), standard_normal_log_pdf(&x));
        assert!(flow.log_density(&rng.gaussian_matrix(3, 2)).is_err());
    }

    #[test]
    fn empty_sample_and_augmentation_dropped() {
        let mut rng = Rng::new(1);
        let flow = FlowStack::new(
            1,
            1,
            &FlowSpec::new(4, 1, 2),
            NormalizationStats::identity(1),
            &mut rng,
        )
        .unwrap();
        assert_eq!(flow.sample(0, &mut rng).unwrap().shape(), &[0, 1]);
        assert_eq!(flow.sample(7, &mut rng).unwrap().shape(), &[7, 1]);
    }

    #[test]
    fn fewer_than_two_couplings_rejected() {
        let mut rng = Rng::new(1);
        assert!(FlowStack::new(
            2,
            0,
            &FlowSpec::new(4, 1, 1),
            NormalizationStats::identity(2),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn taped_nll_matches_log_density() {
        let mut rng = Rng::new(4);
        let mut flow = FlowStack::new(
            3,
            0,
            &FlowSpec::new(5, 2, 3),
            NormalizationStats::identity(3),
            &mut rng,
        )
        .unwrap();
        // give the couplings non-trivial output layers
        for layer in flow.layers.iter_mut() {
            if let FlowLayer::Coupling(c) = layer {
                *c = random_layer(3, c.parity(), rng.next_u64());
            }
        }
        let x = rng.gaussian_matrix(6, 3);
        let mut tape = Tape::new();
        let leaves: Vec<Var> = flow
            .params()
            .into_iter()
            .map(|p| tape.param(p.clone()))
            .collect();
        let (loss, _) = flow.nll_tape(&mut tape, &leaves, &x).unwrap();
        let lp = flow.log_density(&x).unwrap();
        let expected = -lp.iter().sum::<f64>() / 6.0;
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_flow_inverts() {
        let mut rng = Rng::new(2);
        let spec = FlowSpec {
            batch_norm: true,
            ..FlowSpec::new(4, 1, 3)
        };
        let samples = rng.gaussian_matrix(200, 2).map(|x| 3.0 * x + 1.0);
        let cfg = TrainConfig::new(5, 50, 1e-2, 1.0, 0.0);
        let flow = train_flow(&samples, &spec, 0, &cfg, &mut rng).unwrap().flow;
        assert!(flow
            .layers()
            .iter()
            .any(|l| matches!(l, FlowLayer::BatchNorm(_))));
        let z = rng.gaussian_matrix(10, 2);
        let (x, fwd) = flow.forward(&z).unwrap();
        let (back, inv) = flow.to_base(&x).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-10);
        for (a, b) in fwd.iter().zip(inv) {
            assert!((a + b).abs() < 1e-10);
        }
    }
}
