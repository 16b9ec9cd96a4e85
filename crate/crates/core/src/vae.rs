//! Variational encoder and decoder: the inverse half of the model.
//!
//! The encoder maps an input `v` to a diagonal Gaussian `N(μ, σ²)` over the
//! latent space `W`; the decoder maps `[y, w]` back to `v̂`. Both work in
//! standardized coordinates internally and convert at the public edges.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::emulator::{epoch_batches, ForwardSurrogate, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, MlpShape};
use crate::normalize::NormalizationStats;
use crate::optim::{lr_at, AdamState};
use crate::physics::Dataset;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Smallest standard deviation the encoder can emit.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// How the encoder's second output block `ρ` becomes `σ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaHead {
    /// `σ = exp(ρ/2)`: `ρ` is a log-variance.
    #[default]
    LogVariance,
    /// `σ = log(1 + e^ρ)`.
    Softplus,
}

impl SigmaHead {
    fn apply(self, rho: f64) -> f64 {
        let s = match self {
            SigmaHead::LogVariance => (0.5 * rho).exp(),
            SigmaHead::Softplus => crate::autodiff::softplus(rho),
        };
        s.max(SIGMA_FLOOR)
    }

    fn apply_tape(self, tape: &mut Tape, rho: Var) -> Var {
        let s = match self {
            SigmaHead::LogVariance => {
                let half = tape.scale(rho, 0.5);
                tape.exp(half)
            }
            SigmaHead::Softplus => tape.softplus(rho),
        };
        tape.clamp_min(s, SIGMA_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalEncoder {
    net: DenseNet,
    latent_dim: usize,
    head: SigmaHead,
    v_stats: NormalizationStats,
}

impl VariationalEncoder {
    pub fn new(
        shape: &MlpShape,
        latent_dim: usize,
        head: SigmaHead,
        v_stats: NormalizationStats,
        rng: &mut Rng,
    ) -> Result<Self> {
        let net = DenseNet::new(shape.spec(v_stats.dim(), 2 * latent_dim), rng)?;
        Self::from_net(net, head, v_stats)
    }

    pub fn from_net(net: DenseNet, head: SigmaHead, v_stats: NormalizationStats) -> Result<Self> {
        let out = net.output_dim();
        if out == 0 || out % 2 != 0 || net.input_dim() != v_stats.dim() {
            return Err(Error::shape(
                "encoder network",
                format!("{} → 2·dim(w)", v_stats.dim()),
                format!("{} → {out}", net.input_dim()),
            ));
        }
        Ok(Self {
            latent_dim: out / 2,
            net,
            head,
            v_stats,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn head(&self) -> SigmaHead {
        self.head
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn v_stats(&self) -> &NormalizationStats {
        &self.v_stats
    }

    /// `(μ, σ)` for standardized inputs.
    pub fn encode_standardized(&self, v_std: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.net.forward(v_std)?;
        let d = self.latent_dim;
        let mu = out.slice_cols(0, d);
        let sigma = out.slice_cols(d, 2 * d).map(|r| self.head.apply(r));
        Ok((mu, sigma))
    }

    /// `(μ, σ)` for physical inputs.
    pub fn encode(&self, v: &Tensor) -> Result<(Tensor, Tensor)> {
        self.encode_standardized(&self.v_stats.standardize(v)?)
    }

    /// Taped `(μ, σ)`; `params` holds one leaf per network parameter.
    pub fn encode_tape(&self, tape: &mut Tape, params: &[Var], v_std: Var) -> (Var, Var) {
        let out = self.net.forward_tape(tape, params, v_std);
        let d = self.latent_dim;
        let mu = tape.slice_cols(out, 0, d);
        let rho = tape.slice_cols(out, d, 2 * d);
        (mu, self.head.apply_tape(tape, rho))
    }
}

/// `w = μ + σ ⊙ ε`.
pub fn reparam(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape(
            "reparam",
            format!("{:?}", mu.shape()),
            format!("σ {:?}, ε {:?}", sigma.shape(), eps.shape()),
        ));
    }
    let scaled = sigma.zip_map(eps, |s, e| s * e);
    Ok(mu.zip_map(&scaled, |m, s| m + s))
}

/// `(1/2N) Σᵢ Σₖ (μ² + σ² − log σ² − 1)`.
pub fn kl_loss(mu: &Tensor, sigma: &Tensor) -> Result<f64> {
    if mu.shape() != sigma.shape() {
        return Err(Error::shape(
            "kl_loss",
            format!("{:?}", mu.shape()),
            format!("{:?}", sigma.shape()),
        ));
    }
    if let Some(s) = sigma.data().iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "σ must be positive, found {s}"
        )));
    }
    let n = mu.rows().max(1) as f64;
    let total: f64 = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(m, s)| m * m + s * s - (s * s).ln() - 1.0)
        .sum();
    Ok(total / (2.0 * n))
}

fn kl_tape(tape: &mut Tape, mu: Var, sigma: Var) -> Var {
    let (n, d) = {
        let v = tape.value(mu);
        (v.rows().max(1) as f64, v.cols() as f64)
    };
    let m2 = tape.square(mu);
    let s2 = tape.square(sigma);
    let log_s = tape.log(sigma);
    let a = tape.sum(m2);
    let b = tape.sum(s2);
    let c = tape.sum(log_s);
    let c = tape.scale(c, -2.0);
    let ab = tape.add(a, b);
    let sum = tape.add(ab, c);
    let scaled = tape.scale(sum, 0.5 / n);
    tape.add_scalar(scaled, -0.5 * d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    net: DenseNet,
    latent_dim: usize,
    v_stats: NormalizationStats,
    y_stats: NormalizationStats,
}

impl Decoder {
    pub fn new(
        shape: &MlpShape,
        latent_dim: usize,
        v_stats: NormalizationStats,
        y_stats: NormalizationStats,
        rng: &mut Rng,
    ) -> Result<Self> {
        let net = DenseNet::new(shape.spec(y_stats.dim() + latent_dim, v_stats.dim()), rng)?;
        Self::from_net(net, latent_dim, v_stats, y_stats)
    }

    pub fn from_net(
        net: DenseNet,
        latent_dim: usize,
        v_stats: NormalizationStats,
        y_stats: NormalizationStats,
    ) -> Result<Self> {
        if net.input_dim() != y_stats.dim() + latent_dim || net.output_dim() != v_stats.dim() {
            return Err(Error::shape(
                "decoder network",
                format!("{} → {}", y_stats.dim() + latent_dim, v_stats.dim()),
                format!("{} → {}", net.input_dim(), net.output_dim()),
            ));
        }
        Ok(Self {
            net,
            latent_dim,
            v_stats,
            y_stats,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn v_stats(&self) -> &NormalizationStats {
        &self.v_stats
    }

    pub fn y_stats(&self) -> &NormalizationStats {
        &self.y_stats
    }

    fn check(&self, y_rows: usize, y_cols: usize, w: &Tensor) -> Result<()> {
        if y_cols != self.y_stats.dim() || w.cols() != self.latent_dim || y_rows != w.rows() {
            return Err(Error::shape(
                "decode",
                format!(
                    "y: [n, {}], w: [n, {}]",
                    self.y_stats.dim(),
                    self.latent_dim
                ),
                format!("y: [{y_rows}, {y_cols}], w: {:?}", w.shape()),
            ));
        }
        Ok(())
    }

    /// Standardized `v̂` for standardized `y` and latent `w`.
    pub fn decode_standardized(&self, y_std: &Tensor, w: &Tensor) -> Result<Tensor> {
        self.check(y_std.rows(), y_std.cols(), w)?;
        self.net.forward(&y_std.concat_cols(w))
    }

    /// Physical `v̂` for physical `y` and latent `w`.
    pub fn decode(&self, y: &Tensor, w: &Tensor) -> Result<Tensor> {
        let v_std = self.decode_standardized(&self.y_stats.standardize(y)?, w)?;
        self.v_stats.destandardize(&v_std)
    }

    pub fn decode_tape(&self, tape: &mut Tape, params: &[Var], y_std: Var, w: Var) -> Var {
        let x = tape.concat_cols(y_std, w);
        self.net.forward_tape(tape, params, x)
    }
}

/// Loss weights. `lambda_e` and `lambda_f` belong to the separately trained
/// emulator and flow and are carried only for provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    #[serde(default = "one")]
    pub lambda_e: f64,
    pub lambda_v: f64,
    #[serde(default = "one")]
    pub lambda_f: f64,
    pub lambda_d: f64,
    #[serde(default)]
    pub lambda_r: f64,
}

fn one() -> f64 {
    1.0
}

impl PenaltyConfig {
    pub fn new(lambda_v: f64, lambda_d: f64, lambda_r: f64) -> Self {
        Self {
            lambda_e: 1.0,
            lambda_v,
            lambda_f: 1.0,
            lambda_d,
            lambda_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_e,
            self.lambda_v,
            self.lambda_f,
            self.lambda_d,
            self.lambda_r,
        ];
        if all.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!(
                "penalties must be finite and non-negative: {self:?}"
            )));
        }
        if self.lambda_d == 0.0 {
            return Err(Error::Config(
                "lambda_d must be positive to train the decoder".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub encoder: MlpShape,
    pub decoder: MlpShape,
    pub latent_dim: usize,
    #[serde(default)]
    pub sigma_head: SigmaHead,
}

/// Trained encoder/decoder pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseModel {
    pub encoder: VariationalEncoder,
    pub decoder: Decoder,
    pub penalties: PenaltyConfig,
}

impl InverseModel {
    pub fn new(
        spec: &VaeSpec,
        penalties: PenaltyConfig,
        v_stats: NormalizationStats,
        y_stats: NormalizationStats,
        rng: &mut Rng,
    ) -> Result<Self> {
        if spec.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        let encoder = VariationalEncoder::new(
            &spec.encoder,
            spec.latent_dim,
            spec.sigma_head,
            v_stats.clone(),
            rng,
        )?;
        let decoder = Decoder::new(&spec.decoder, spec.latent_dim, v_stats, y_stats, rng)?;
        Ok(Self {
            encoder,
            decoder,
            penalties,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }
}

/// One mini-batch in standardized coordinates. `aux` stays physical: the
/// surrogate standardizes it itself.
#[derive(Clone, Copy, Debug)]
pub struct VaeBatch<'a> {
    pub v_std: &'a Tensor,
    pub y_std: &'a Tensor,
    pub aux: &'a Tensor,
    pub eps: &'a Tensor,
}

/// Nodes of the composite loss. Terms with a zero weight are evaluated for
/// the history but never enter `total`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub kl: Var,
    pub reconstruction: Var,
    pub physics: Option<Var>,
}

/// Per-column map `x_to = shift + scale·x_from` between two
/// standardizations of the same quantity.
fn affine_between(from: &NormalizationStats, to: &NormalizationStats) -> Result<(Tensor, Tensor)> {
    if from.dim() != to.dim() || from.log_flags() != to.log_flags() {
        return Err(Error::Config(format!(
            "standardizations disagree on dimension or log flags: {:?} vs {:?}",
            from.log_flags(),
            to.log_flags()
        )));
    }
    let scale: Vec<f64> = from
        .std()
        .iter()
        .zip(to.std())
        .map(|(a, b)| a / b)
        .collect();
    let shift: Vec<f64> = (0..from.dim())
        .map(|k| (from.mean()[k] - to.mean()[k]) / to.std()[k])
        .collect();
    Ok((Tensor::row_vector(&scale), Tensor::row_vector(&shift)))
}

fn apply_affine(tape: &mut Tape, x: Var, map: &(Tensor, Tensor)) -> Var {
    let s = tape.constant(map.0.clone());
    let b = tape.constant(map.1.clone());
    let scaled = tape.mul_row(x, s);
    tape.add_row(scaled, b)
}

/// `λ_v·L_v + λ_d·L_d + λ_r·L_r` on a tape.
///
/// `enc_params`/`dec_params` hold one leaf per network parameter. The
/// surrogate is only touched when `λ_r > 0`.
pub fn composite_loss_tape(
    model: &InverseModel,
    tape: &mut Tape,
    enc_params: &[Var],
    dec_params: &[Var],
    batch: VaeBatch<'_>,
    surrogate: Option<&dyn ForwardSurrogate>,
) -> Result<LossTerms> {
    let p = model.penalties;
    let d = model.latent_dim();
    if batch.eps.cols() != d
        || batch.eps.rows() != batch.v_std.rows()
        || batch.y_std.rows() != batch.v_std.rows()
    {
        return Err(Error::shape(
            "vae batch",
            format!("{} rows, ε with {d} columns", batch.v_std.rows()),
            format!("y {:?}, ε {:?}", batch.y_std.shape(), batch.eps.shape()),
        ));
    }
    let v = tape.constant(batch.v_std.clone());
    let y = tape.constant(batch.y_std.clone());
    let eps = tape.constant(batch.eps.clone());
    let (mu, sigma) = model.encoder.encode_tape(tape, enc_params, v);
    let noise = tape.mul(sigma, eps);
    let w = tape.add(mu, noise);
    let v_hat = model.decoder.decode_tape(tape, dec_params, y, w);

    let kl = kl_tape(tape, mu, sigma);
    let reconstruction = tape.mse_rows(v_hat, v);
    let mut total = tape.scale(reconstruction, p.lambda_d);
    if p.lambda_v > 0.0 {
        let t = tape.scale(kl, p.lambda_v);
        total = tape.add(total, t);
    }
    let mut physics = None;
    if p.lambda_r > 0.0 {
        let s = surrogate
            .ok_or_else(|| Error::Config("lambda_r > 0 needs a trained emulator".into()))?;
        let to_emulator = affine_between(model.decoder.v_stats(), s.input_stats())?;
        let from_emulator = affine_between(s.output_stats(), model.decoder.y_stats())?;
        let v_e = apply_affine(tape, v_hat, &to_emulator);
        let y_e = s.forward_standardized(tape, v_e, batch.aux)?;
        let y_hat = apply_affine(tape, y_e, &from_emulator);
        let r = tape.mse_rows(y_hat, y);
        let t = tape.scale(r, p.lambda_r);
        total = tape.add(total, t);
        physics = Some(r);
    }
    Ok(LossTerms {
        total,
        kl,
        reconstruction,
        physics,
    })
}

/// Epoch means of every loss term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeHistory {
    pub kl: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub physics: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub model: InverseModel,
    pub history: VaeHistory,
    pub collapse: CollapseDiagnosis,
    /// Number of mini-batches that evaluated the surrogate.
    pub surrogate_calls: usize,
}

/// Fits the encoder and decoder on `(v, y)` records.
///
/// Every mini-batch visit draws a fresh `ε`. `surrogate` may be `None`
/// when `λ_r = 0`.
pub fn train_vae_decoder(
    data: &Dataset,
    surrogate: Option<&dyn ForwardSurrogate>,
    spec: &VaeSpec,
    penalties: PenaltyConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainedVae> {
    cfg.validate()?;
    penalties.validate()?;
    if data.len() < 2 {
        return Err(Error::Data(
            "need at least two records to train the inverse model".into(),
        ));
    }
    if penalties.lambda_r > 0.0 {
        let s = surrogate
            .ok_or_else(|| Error::Config("lambda_r > 0 needs a trained emulator".into()))?;
        if s.aux_layout() != data.layout {
            return Err(Error::Config(
                "emulator auxiliary layout does not match the dataset".into(),
            ));
        }
    }
    let v_stats = NormalizationStats::fit(&data.v, &data.system.input_log_flags())?;
    let y_stats = NormalizationStats::fit(&data.y, &vec![false; data.y.cols()])?;
    let v_std = v_stats.standardize(&data.v)?;
    let y_std = y_stats.standardize(&data.y)?;
    let mut model = InverseModel::new(spec, penalties, v_stats, y_stats, rng)?;

    let mut adam = AdamState::new(
        cfg.adam(),
        model
            .encoder
            .net
            .params()
            .into_iter()
            .chain(model.decoder.net.params()),
    );
    let mut history = VaeHistory::default();
    let mut surrogate_calls = 0;
    let n = data.len() as f64;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, cfg.gamma, epoch);
        let mut sums = [0.0; 4];
        for idx in epoch_batches(data.len(), cfg.batch_size, rng) {
            let vb = v_std.select_rows(&idx);
            let yb = y_std.select_rows(&idx);
            let ab = data.aux.select_rows(&idx);
            let eps = rng.gaussian_matrix(idx.len(), spec.latent_dim);
            let mut tape = Tape::new();
            let ep = model.encoder.net.tape_params(&mut tape);
            let dp = model.decoder.net.tape_params(&mut tape);
            let batch = VaeBatch {
                v_std: &vb,
                y_std: &yb,
                aux: &ab,
                eps: &eps,
            };
            let terms = composite_loss_tape(&model, &mut tape, &ep, &dp, batch, surrogate)?;
            if terms.physics.is_some() {
                surrogate_calls += 1;
            }
            let diverged = || Error::Diverged {
                what: "inverse-model loss".into(),
                epoch,
            };
            let grads = tape.backward(terms.total).map_err(|_| diverged())?;
            let g: Vec<Tensor> = ep
                .iter()
                .chain(&dp)
                .map(|&v| {
                    grads
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
                })
                .collect();
            let params: Vec<&mut Tensor> = model
                .encoder
                .net
                .params_mut()
                .into_iter()
                .chain(model.decoder.net.params_mut())
                .collect();
            adam.step(params, &g, lr).map_err(|_| diverged())?;
            let w = idx.len() as f64;
            sums[0] += w * tape.value(terms.kl).data()[0];
            sums[1] += w * tape.value(terms.reconstruction).data()[0];
            sums[2] += w * terms.physics.map_or(0.0, |r| tape.value(r).data()[0]);
            sums[3] += w * tape.value(terms.total).data()[0];
        }
        if sums.iter().any(|s| !s.is_finite()) {
            return Err(Error::Diverged {
                what: "inverse-model loss".into(),
                epoch,
            });
        }
        history.kl.push(sums[0] / n);
        history.reconstruction.push(sums[1] / n);
        history.physics.push(sums[2] / n);
        history.total.push(sums[3] / n);
        if cfg.plateaued(&history.total) {
            break;
        }
    }
    let collapse = collapse_monitor(&history.kl, &history.reconstruction, spec.latent_dim, None);
    Ok(TrainedVae {
        model,
        history,
        collapse,
        surrogate_calls,
    })
}

/// Mean squared reconstruction error `‖v̂ − v‖²` in standardized
/// coordinates, decoding each record from its own `y` and encoder mean.
pub fn reconstruction_mse(model: &InverseModel, v: &Tensor, y: &Tensor) -> Result<f64> {
    let v_std = model.encoder.v_stats().standardize(v)?;
    let (mu, _) = model.encoder.encode_standardized(&v_std)?;
    let v_hat = model
        .decoder
        .decode_standardized(&model.decoder.y_stats().standardize(y)?, &mu)?;
    let n = v.rows().max(1) as f64;
    Ok(v_hat.zip_map(&v_std, |a, b| (a - b).powi(2)).sum() / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CollapseDiagnosis {
    /// Fewer epochs than the monitor needs.
    InsufficientHistory {
        epochs: usize,
    },
    Healthy,
    Collapsed {
        epoch: usize,
        kl: f64,
        advisory: String,
    },
}

impl CollapseDiagnosis {
    pub fn is_collapsed(&self) -> bool {
        matches!(self, CollapseDiagnosis::Collapsed { .. })
    }
}

const MIN_MONITOR_EPOCHS: usize = 20;

/// `true` when the reconstruction loss has levelled off by `epoch`: the
/// mean over epochs `e−4..=e` improves on the mean over `e−9..=e−5` by
/// less than 1%. Epochs before 10 never count as a plateau.
fn plateaued(reconstruction: &[f64], epoch: usize) -> bool {
    if epoch < 10 || epoch >= reconstruction.len() {
        return false;
    }
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    let older = mean(&reconstruction[epoch - 9..=epoch - 5]);
    let recent = mean(&reconstruction[epoch - 4..=epoch]);
    older <= 0.0 || (older - recent) / older < 0.01
}

/// Looks for the KL loss dropping below `threshold` (default
/// `1e-3·latent_dim`) at an epoch where the reconstruction loss is still
/// improving.
pub fn collapse_monitor(
    kl: &[f64],
    reconstruction: &[f64],
    latent_dim: usize,
    threshold: Option<f64>,
) -> CollapseDiagnosis {
    if kl.len() < MIN_MONITOR_EPOCHS {
        return CollapseDiagnosis::InsufficientHistory { epochs: kl.len() };
    }
    let tau = threshold.unwrap_or(1e-3 * latent_dim as f64);
    for (epoch, &value) in kl.iter().enumerate() {
        if value < tau && !plateaued(reconstruction, epoch) {
            return CollapseDiagnosis::Collapsed {
                epoch,
                kl: value,
                advisory: format!(
                    "KL loss fell to {value:.3e} at epoch {epoch} while the reconstruction loss was still improving: \
                     the encoder has collapsed onto the prior. Lower lambda_v or raise lambda_d (keeping lambda_r fixed) and retrain."
                ),
            };
        }
    }
    CollapseDiagnosis::Healthy
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::autodiff::grad;
    use crate::emulator::AuxLayout;
    use crate::nn::{Activation, DenseNetSpec};

    fn tiny_model(rng: &mut Rng, penalties: PenaltyConfig) -> InverseModel {
        let spec = VaeSpec {
            encoder: MlpShape::new(4, 1, Activation::Silu),
            decoder: MlpShape::new(4, 1, Activation::Silu),
            latent_dim: 1,
            sigma_head: SigmaHead::LogVariance,
        };
        let v_stats =
            NormalizationStats::new(vec![1.0, -2.0, 0.5], vec![2.0, 0.5, 1.5], vec![false; 3])
                .unwrap();
        let y_stats =
            NormalizationStats::new(vec![0.3, 0.1], vec![1.2, 0.7], vec![false; 2]).unwrap();
        InverseModel::new(&spec, penalties, v_stats, y_stats, rng).unwrap()
    }

    /// Frozen linear map `y_std = v_std·A` that counts its calls.
    struct CountingSurrogate {
        a: Tensor,
        v_stats: NormalizationStats,
        y_stats: NormalizationStats,
        calls: Cell<usize>,
    }

    impl ForwardSurrogate for CountingSurrogate {
        fn input_stats(&self) -> &NormalizationStats {
            &self.v_stats
        }
        fn output_stats(&self) -> &NormalizationStats {
            &self.y_stats
        }
        fn aux_layout(&self) -> AuxLayout {
            AuxLayout::none()
        }
        fn forward_standardized(&self, tape: &mut Tape, v_std: Var, _aux: &Tensor) -> Result<Var> {
            self.calls.set(self.calls.get() + 1);
            let a = tape.constant(self.a.clone());
            Ok(tape.matmul(v_std, a))
        }
    }

    #[test]
    fn zero_softplus_encoder_gives_log_two() {
        let spec = DenseNetSpec::new(2, 3, 1, Activation::Relu, 4);
        let enc = VariationalEncoder::from_net(
            DenseNet::zeros(spec).unwrap(),
            SigmaHead::Softplus,
            NormalizationStats::identity(2),
        )
        .unwrap();
        let (mu, sigma) = enc
            .encode(&Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 5.0]], 2).unwrap())
            .unwrap();
        assert!(mu.data().iter().all(|&m| m == 0.0));
        assert!(sigma.data().iter().all(|&s| (s - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = Rng::new(3);
        let model = tiny_model(&mut rng, PenaltyConfig::new(1.0, 1.0, 0.0));
        let v = rng.gaussian_matrix(5, 3);
        assert_eq!(
            model.encoder.encode(&v).unwrap(),
            model.encoder.encode(&v).unwrap()
        );
    }

    #[test]
    fn reparam_matches_formula_and_moments() {
        let mu = Tensor::row_vector(&[0.5, -1.0]);
        let sigma = Tensor::row_vector(&[2.0, 0.1]);
        assert_eq!(reparam(&mu, &sigma, &Tensor::zeros(&[1, 2])).unwrap(), mu);
        let floor = Tensor::row_vector(&[SIGMA_FLOOR, SIGMA_FLOOR]);
        let w = reparam(&mu, &floor, &Tensor::row_vector(&[1.0, -1.0])).unwrap();
        assert!(w.max_abs_diff(&mu) < 1e-5);

        let mut rng = Rng::new(11);
        let n = 100_000;
        let (mut s1, mut s2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let w = reparam(&mu, &sigma, &rng.gaussian_matrix(1, 2)).unwrap();
            for k in 0..2 {
                s1[k] += w.data()[k];
                s2[k] += w.data()[k] * w.data()[k];
            }
        }
        for k in 0..2 {
            let mean = s1[k] / n as f64;
            let std = (s2[k] / n as f64 - mean * mean).sqrt();
            // the mean check is against 3 standard errors, the std one relative
            assert!(
                (mean - mu.data()[k]).abs() < 3.0 * sigma.data()[k] / (n as f64).sqrt() + 1e-12
            );
            assert!((std / sigma.data()[k] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(
            kl_loss(&Tensor::zeros(&[4, 3]), &Tensor::full(&[4, 3], 1.0)).unwrap(),
            0.0
        );
        assert!(
            (kl_loss(&Tensor::full(&[1, 1], 1.0), &Tensor::full(&[1, 1], 1.0)).unwrap() - 0.5)
                .abs()
                < 1e-15
        );
        assert!(kl_loss(&Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn zero_decoder_returns_destandardized_bias() {
        let mut net = DenseNet::zeros(DenseNetSpec::new(3, 4, 2, Activation::Silu, 2)).unwrap();
        net.biases_mut()[2] = Tensor::row_vector(&[1.0, -0.5]);
        let v_stats =
            NormalizationStats::new(vec![10.0, 0.0], vec![2.0, 4.0], vec![false; 2]).unwrap();
        let dec = Decoder::from_net(net, 1, v_stats, NormalizationStats::identity(2)).unwrap();
        let v = dec
            .decode(
                &Tensor::from_rows(&[vec![3.0, 1.0], vec![-1.0, 0.0]], 2).unwrap(),
                &Tensor::from_rows(&[vec![0.4], vec![9.0]], 1).unwrap(),
            )
            .unwrap();
        for r in v.iter_rows() {
            assert_eq!(r, &[12.0, -2.0]);
        }
        assert!(dec
            .decode(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 1]))
            .is_err());
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let model = tiny_model(&mut rng, PenaltyConfig::new(1.0, 3.0, 2.0));
        let sur = CountingSurrogate {
            a: Tensor::from_rows(&[vec![0.5, -1.0], vec![0.2, 0.3], vec![-0.7, 0.1]], 2).unwrap(),
            v_stats: NormalizationStats::new(
                vec![0.0, -1.0, 0.0],
                vec![1.0, 1.0, 2.0],
                vec![false; 3],
            )
            .unwrap(),
            y_stats: NormalizationStats::new(vec![0.5, 0.0], vec![2.0, 1.0], vec![false; 2])
                .unwrap(),
            calls: Cell::new(0),
        };
        let v = rng.gaussian_matrix(4, 3);
        let y = rng.gaussian_matrix(4, 2);
        let eps = rng.gaussian_matrix(4, 1);
        let aux = Tensor::zeros(&[4, 0]);
        let ne = model.encoder.net().params().len();
        let params: Vec<Tensor> = model
            .encoder
            .net()
            .params()
            .into_iter()
            .chain(model.decoder.net().params())
            .cloned()
            .collect();
        let build = |tape: &mut Tape, p: &[Var]| {
            let batch = VaeBatch {
                v_std: &v,
                y_std: &y,
                aux: &aux,
                eps: &eps,
            };
            composite_loss_tape(&model, tape, &p[..ne], &p[ne..], batch, Some(&sur))
                .unwrap()
                .total
        };
        let g = grad(build, &params).unwrap();
        let eval = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
            let out = build(&mut t, &vs);
            t.value(out).data()[0]
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.numel() {
                let mut plus = params.clone();
                plus[pi].data_mut()[k] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[k] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = g[pi].data()[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                    "param {pi}[{k}]: {an} vs {fd}"
                );
            }
        }
        assert!(sur.calls.get() > 0);
    }

    #[test]
    fn zero_weight_terms_leave_the_gradient_exactly() {
        let mut rng = Rng::new(8);
        let gated = tiny_model(&mut rng, PenaltyConfig::new(0.0, 2.0, 0.0));
        let v = rng.gaussian_matrix(3, 3);
        let y = rng.gaussian_matrix(3, 2);
        let eps = rng.gaussian_matrix(3, 1);
        let aux = Tensor::zeros(&[3, 0]);
        let ne = gated.encoder.net().params().len();
        let params: Vec<Tensor> = gated
            .encoder
            .net()
            .params()
            .into_iter()
            .chain(gated.decoder.net().params())
            .cloned()
            .collect();
        let g1 = grad(
            |t, p| {
                let b = VaeBatch {
                    v_std: &v,
                    y_std: &y,
                    aux: &aux,
                    eps: &eps,
                };
                composite_loss_tape(&gated, t, &p[..ne], &p[ne..], b, None)
                    .unwrap()
                    .total
            },
            &params,
        )
        .unwrap();
        // the reconstruction term alone, built by hand
        let g2 = grad(
            |t, p| {
                let vv = t.constant(v.clone());
                let yy = t.constant(y.clone());
                let e = t.constant(eps.clone());
                let (mu, sigma) = gated.encoder.encode_tape(t, &p[..ne], vv);
                let noise = t.mul(sigma, e);
                let w = t.add(mu, noise);
                let vh = gated.decoder.decode_tape(t, &p[ne..], yy, w);
                let r = t.mse_rows(vh, vv);
                t.scale(r, 2.0)
            },
            &params,
        )
        .unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.max_abs_diff(b) <= 1e-12);
        }
    }

    #[test]
    fn mismatched_log_flags_are_rejected() {
        let a = NormalizationStats::new(vec![1.0], vec![1.0], vec![true]).unwrap();
        let b = NormalizationStats::new(vec![1.0], vec![1.0], vec![false]).unwrap();
        assert!(affine_between(&a, &b).is_err());
        let c = NormalizationStats::new(vec![3.0], vec![2.0], vec![true]).unwrap();
        let (s, t) = affine_between(&a, &c).unwrap();
        // x_std under `a` = 0.4 means log v = 1.4; under `c` that is −0.8
        assert!((t.data()[0] + s.data()[0] * 0.4 + 0.8).abs() < 1e-15);
    }

    #[test]
    fn monitor_flags_zero_kl() {
        let kl = vec![0.0; 30];
        let rec: Vec<f64> = (0..30).map(|e| 1.0 / (1.0 + e as f64)).collect();
        assert!(collapse_monitor(&kl, &rec, 2, None).is_collapsed());
    }

    #[test]
    fn monitor_ignores_healthy_kl() {
        let kl = vec![0.5 * 3.0; 40];
        let rec: Vec<f64> = (0..40).map(|e| (-(e as f64) / 5.0).exp()).collect();
        assert_eq!(
            collapse_monitor(&kl, &rec, 3, None),
            CollapseDiagnosis::Healthy
        );
    }

    #[test]
    fn monitor_flags_decaying_kl_at_the_crossing() {
        let kl: Vec<f64> = (0..40).map(|e| (-(e as f64)).exp()).collect();
        let rec: Vec<f64> = (0..40).map(|e| 1.0 / (1.0 + e as f64)).collect();
        // e^{−t} < 1e−3 first at t = 7
        match collapse_monitor(&kl, &rec, 1, None) {
            CollapseDiagnosis::Collapsed { epoch, .. } => assert_eq!(epoch, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn monitor_respects_plateau_and_history_length() {
        assert_eq!(
            collapse_monitor(&[0.0; 5], &[1.0; 5], 1, None),
            CollapseDiagnosis::InsufficientHistory { epochs: 5 }
        );
        // KL drifts down only after the reconstruction loss is flat
        let kl: Vec<f64> = (0..40).map(|e| if e < 30 { 1.0 } else { 0.0 }).collect();
        assert_eq!(
            collapse_monitor(&kl, &[0.2; 40], 1, None),
            CollapseDiagnosis::Healthy
        );
    }

    #[test]
    fn zero_physics_weight_never_calls_the_surrogate() {
        let mut rng = Rng::new(1);
        let data = crate::physics::generate_dataset(
            &crate::physics::System::Linear,
            crate::physics::SubsampleRule::Whole,
            64,
            3,
        )
        .unwrap();
        let spec = VaeSpec {
            encoder: MlpShape::new(4, 1, Activation::Relu),
            decoder: MlpShape::new(4, 1, Activation::Silu),
            latent_dim: 1,
            sigma_head: SigmaHead::LogVariance,
        };
        let sur = CountingSurrogate {
            a: Tensor::zeros(&[3, 2]),
            v_stats: NormalizationStats::identity(3),
            y_stats: NormalizationStats::identity(2),
            calls: Cell::new(0),
        };
        let cfg = TrainConfig::new(3, 16, 1e-2, 1.0, 0.0);
        let out = train_vae_decoder(
            &data,
            Some(&sur),
            &spec,
            PenaltyConfig::new(1.0, 10.0, 0.0),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(sur.calls.get(), 0);
        assert_eq!(out.surrogate_calls, 0);
        assert!(out.history.physics.iter().all(|&r| r == 0.0));
        assert_eq!(out.history.kl.len(), 3);
        assert_eq!(
            out.collapse,
            CollapseDiagnosis::InsufficientHistory { epochs: 3 }
        );
    }
}
