//! Forward surrogate `N_e`.
//!
//! In direct mode the network maps standardized `[v, aux]` to standardized
//! `y`. In residual mode it predicts the increment of a time-stepping system:
//! `y(tₙ) = y(tₙ₋₁) + σ_Δ ⊙ N_e(v, aux)`, where `σ_Δ` is the per-component
//! standard deviation of the training increments. A zero network is then
//! exactly the identity flow map.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, DenseNetSpec};
use crate::normalize::NormalizationStats;
use crate::optim::{lr_at, AdamConfig, AdamState};
use crate::physics::rd::NEIGHBOURS;
use crate::physics::Dataset;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape of the auxiliary data fed next to `v`: `lags` previous states of the
/// record's own location (oldest first), then `neighbours` states at the
/// previous step in N, S, E, W, NE, NW, SE, SW order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxLayout {
    pub state_dim: usize,
    pub lags: usize,
    pub neighbours: usize,
}

impl AuxLayout {
    pub fn none() -> Self {
        Self {
            state_dim: 0,
            lags: 0,
            neighbours: 0,
        }
    }

    pub fn lagged(state_dim: usize, lags: usize) -> Self {
        Self {
            state_dim,
            lags,
            neighbours: 0,
        }
    }

    /// One-ring spatial layout: `lags` own states plus the eight neighbours.
    pub fn spatial(state_dim: usize, lags: usize) -> Self {
        Self {
            state_dim,
            lags,
            neighbours: NEIGHBOURS.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.state_dim * (self.lags + self.neighbours)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column range of the most recent own state.
    pub fn last_lag(&self) -> Option<std::ops::Range<usize>> {
        (self.lags > 0).then(|| (self.lags - 1) * self.state_dim..self.lags * self.state_dim)
    }

    /// Column names, given the names of the state components.
    pub fn names(&self, state: &[String]) -> Vec<String> {
        const DIRS: [&str; 8] = ["N", "S", "E", "W", "NE", "NW", "SE", "SW"];
        let mut out = Vec::with_capacity(self.len());
        for k in (1..=self.lags).rev() {
            out.extend(state.iter().map(|s| format!("{s}_lag{k}")));
        }
        for dir in DIRS.iter().take(self.neighbours) {
            out.extend(state.iter().map(|s| format!("{s}_{dir}")));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmulatorMode {
    Direct,
    Residual,
}

/// Mini-batch training schedule shared by every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    /// Stop once the epoch loss has not improved for this many epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<usize>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, gamma: f64, weight_decay: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            gamma,
            weight_decay,
            early_stop: None,
        }
    }

    /// `true` when `history` (one loss per epoch) has gone `early_stop`
    /// epochs without beating its earlier best by 0.01%.
    pub fn plateaued(&self, history: &[f64]) -> bool {
        let Some(patience) = self.early_stop else {
            return false;
        };
        if patience == 0 || history.len() <= patience {
            return false;
        }
        let split = history.len() - patience;
        let best_before = history[..split]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let best_after = history[split..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        best_after > best_before - 1e-4 * best_before.abs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "need lr > 0 and gamma in (0, 1], got {} and {}",
                self.lr, self.gamma
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Mini-batch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// A forward model that can be evaluated on a tape in standardized space.
///
/// The decoder's physics-consistency loss only needs this much of the
/// emulator, which also lets tests substitute an instrumented stand-in.
pub trait ForwardSurrogate {
    fn input_stats(&self) -> &NormalizationStats;
    fn output_stats(&self) -> &NormalizationStats;
    fn aux_layout(&self) -> AuxLayout;
    /// `v_std` is `n × dim(v)` in [`Self::input_stats`] coordinates; `aux`
    /// holds the matching physical auxiliary rows. Returns `n × dim(y)` in
    /// [`Self::output_stats`] coordinates. The surrogate is frozen: its own
    /// weights enter the tape as constants.
    fn forward_standardized(&self, tape: &mut Tape, v_std: Var, aux: &Tensor) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorModel {
    net: DenseNet,
    mode: EmulatorMode,
    layout: AuxLayout,
    v_stats: NormalizationStats,
    y_stats: NormalizationStats,
    /// Increment scale `σ_Δ` (residual mode) in physical units.
    delta_scale: Vec<f64>,
    /// Per-component `max |y|` over the training outputs.
    y_bound: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedEmulator {
    pub model: EmulatorModel,
    pub loss_history: Vec<f64>,
    pub held_out_history: Vec<f64>,
}

/// Autoregressive trajectory; `states` starts with the seed states.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    /// Index into `states` of the first state outside the guard, if any;
    /// the trajectory is truncated there.
    pub diverged_at: Option<usize>,
}

impl EmulatorModel {
    /// Assembles a model from parts; `delta_scale` is ignored in direct mode.
    pub fn from_parts(
        net: DenseNet,
        mode: EmulatorMode,
        layout: AuxLayout,
        v_stats: NormalizationStats,
        y_stats: NormalizationStats,
        delta_scale: Vec<f64>,
        y_bound: Vec<f64>,
    ) -> Result<Self> {
        let dy = y_stats.dim();
        if net.input_dim() != v_stats.dim() + layout.len() || net.output_dim() != dy {
            return Err(Error::shape(
                "emulator network",
                format!("{} → {dy}", v_stats.dim() + layout.len()),
                format!("{} → {}", net.input_dim(), net.output_dim()),
            ));
        }
        if mode == EmulatorMode::Residual
            && (layout.lags == 0 || layout.state_dim != dy || delta_scale.len() != dy)
        {
            return Err(Error::Config("residual emulator needs lagged states of the output and one increment scale per output".into()));
        }
        Ok(Self {
            net,
            mode,
            layout,
            v_stats,
            y_stats,
            delta_scale,
            y_bound,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn mode(&self) -> EmulatorMode {
        self.mode
    }

    pub fn layout(&self) -> AuxLayout {
        self.layout
    }

    pub fn v_stats(&self) -> &NormalizationStats {
        &self.v_stats
    }

    pub fn y_stats(&self) -> &NormalizationStats {
        &self.y_stats
    }

    pub fn delta_scale(&self) -> &[f64] {
        &self.delta_scale
    }

    fn check(&self, v: &Tensor, aux: &Tensor) -> Result<()> {
        if v.cols() != self.v_stats.dim()
            || aux.cols() != self.layout.len()
            || v.rows() != aux.rows()
        {
            return Err(Error::shape(
                "emulate",
                format!(
                    "v: [n, {}], aux: [n, {}]",
                    self.v_stats.dim(),
                    self.layout.len()
                ),
                format!("v: {:?}, aux: {:?}", v.shape(), aux.shape()),
            ));
        }
        Ok(())
    }

    fn aux_stats(&self) -> NormalizationStats {
        self.y_stats
            .repeat(self.layout.lags + self.layout.neighbours)
    }

    fn net_input(&self, v_std: &Tensor, aux: &Tensor) -> Result<Tensor> {
        if self.layout.is_empty() {
            return Ok(v_std.clone());
        }
        Ok(v_std.concat_cols(&self.aux_stats().standardize(aux)?))
    }

    /// `y` for each row of `(v, aux)`, in physical units.
    pub fn emulate(&self, v: &Tensor, aux: &Tensor) -> Result<Tensor> {
        self.check(v, aux)?;
        let input = self.net_input(&self.v_stats.standardize(v)?, aux)?;
        let out = self.net.forward(&input)?;
        match self.mode {
            EmulatorMode::Direct => self.y_stats.destandardize(&out),
            EmulatorMode::Residual => {
                let last = self.layout.last_lag().expect("validated");
                let prev = aux.slice_cols(last.start, last.end);
                let c = out.cols();
                let mut y = prev;
                for (i, x) in y.data_mut().iter_mut().enumerate() {
                    *x += self.delta_scale[i % c] * out.data()[i];
                }
                Ok(y)
            }
        }
    }

    /// Autoregressive rollout of a lagged (non-spatial) residual model.
    ///
    /// `seeds` are the first `lags` exact states; `inputs(n)` returns `v` for
    /// the state at index `n` of the trajectory. A state with any component
    /// beyond ten times the training magnitude stops the rollout.
    pub fn rollout<F>(&self, seeds: &[Vec<f64>], steps: usize, inputs: F) -> Result<Rollout>
    where
        F: Fn(usize) -> Vec<f64>,
    {
        if self.mode != EmulatorMode::Residual || self.layout.neighbours != 0 {
            return Err(Error::InvalidArgument(
                "rollout needs a residual emulator without spatial neighbours".into(),
            ));
        }
        let (lags, d) = (self.layout.lags, self.layout.state_dim);
        if seeds.len() != lags || seeds.iter().any(|s| s.len() != d) {
            return Err(Error::shape(
                "rollout seeds",
                format!("{lags} states of length {d}"),
                format!("{} states", seeds.len()),
            ));
        }
        let mut states = seeds.to_vec();
        for _ in 0..steps {
            let n = states.len();
            let aux: Vec<f64> = states[n - lags..].iter().flatten().copied().collect();
            let v = inputs(n);
            let y = self.emulate(&Tensor::row_vector(&v), &Tensor::row_vector(&aux))?;
            let next = y.data().to_vec();
            let blown = next
                .iter()
                .zip(&self.y_bound)
                .any(|(x, b)| !x.is_finite() || x.abs() > 10.0 * b);
            if blown {
                return Ok(Rollout {
                    states,
                    diverged_at: Some(n),
                });
            }
            states.push(next);
        }
        Ok(Rollout {
            states,
            diverged_at: None,
        })
    }

    /// Training loss for physical records `(v, aux, y)` with `params` one
    /// leaf per network parameter (see [`DenseNet::params`]).
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        v: &Tensor,
        aux: &Tensor,
        y: &Tensor,
    ) -> Result<Var> {
        self.check(v, aux)?;
        let x = tape.constant(self.net_input(&self.v_stats.standardize(v)?, aux)?);
        let t = tape.constant(self.target(aux, y)?);
        let out = self.net.forward_tape(tape, params, x);
        let d = tape.sub(out, t);
        let sq = tape.square(d);
        Ok(tape.mean(sq))
    }

    /// Net target in standardized coordinates for physical `(aux, y)`.
    fn target(&self, aux: &Tensor, y: &Tensor) -> Result<Tensor> {
        match self.mode {
            EmulatorMode::Direct => self.y_stats.standardize(y),
            EmulatorMode::Residual => {
                let last = self.layout.last_lag().expect("validated");
                let prev = aux.slice_cols(last.start, last.end);
                let c = y.cols();
                let mut t = y.clone();
                for (i, x) in t.data_mut().iter_mut().enumerate() {
                    *x = (*x - prev.data()[i]) / self.delta_scale[i % c];
                }
                Ok(t)
            }
        }
    }
}

impl ForwardSurrogate for EmulatorModel {
    fn input_stats(&self) -> &NormalizationStats {
        &self.v_stats
    }

    fn output_stats(&self) -> &NormalizationStats {
        &self.y_stats
    }

    fn aux_layout(&self) -> AuxLayout {
        self.layout
    }

    fn forward_standardized(&self, tape: &mut Tape, v_std: Var, aux: &Tensor) -> Result<Var> {
        let n = tape.value(v_std).rows();
        if aux.rows() != n || aux.cols() != self.layout.len() {
            return Err(Error::shape(
                "emulator aux",
                format!("[{n}, {}]", self.layout.len()),
                format!("{:?}", aux.shape()),
            ));
        }
        let params = self.net.tape_constants(tape);
        let input = if self.layout.is_empty() {
            v_std
        } else {
            let a = tape.constant(self.aux_stats().standardize(aux)?);
            tape.concat_cols(v_std, a)
        };
        let out = self.net.forward_tape(tape, &params, input);
        Ok(match self.mode {
            EmulatorMode::Direct => out,
            EmulatorMode::Residual => {
                // y_std = (prev − μ)/σ + (σ_Δ/σ) ⊙ out
                let last = self.layout.last_lag().expect("validated");
                let prev = self
                    .y_stats
                    .standardize(&aux.slice_cols(last.start, last.end))?;
                let ratio: Vec<f64> = self
                    .delta_scale
                    .iter()
                    .zip(self.y_stats.std())
                    .map(|(d, s)| d / s)
                    .collect();
                let r = tape.constant(Tensor::row_vector(&ratio));
                let scaled = tape.mul_row(out, r);
                let p = tape.constant(prev);
                tape.add(scaled, p)
            }
        })
    }
}

/// Fits an emulator by mini-batch Adam on the mean squared error in
/// standardized coordinates.
///
/// A seeded 10% of the records is held out; its loss is reported per epoch
/// but never trained on.
pub fn train_emulator(
    data: &Dataset,
    spec: &DenseNetSpec,
    mode: EmulatorMode,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainedEmulator> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Data(
            "need at least two records to train an emulator".into(),
        ));
    }
    let (train, held) = data.split(0.1, rng.next_u64());
    let layout = data.layout;
    let dv = data.v.cols();
    let dy = data.y.cols();
    let expected_in = dv + layout.len();
    if spec.input_dim != expected_in || spec.output_dim != dy {
        return Err(Error::shape(
            "emulator spec",
            format!("{expected_in} → {dy}"),
            format!("{} → {}", spec.input_dim, spec.output_dim),
        ));
    }

    let v_stats = NormalizationStats::fit(&train.v, &data.system.input_log_flags())?;
    let y_stats = NormalizationStats::fit(&train.y, &vec![false; dy])?;
    let y_bound: Vec<f64> = (0..dy)
        .map(|c| {
            train
                .y
                .iter_rows()
                .map(|r| r[c].abs())
                .fold(0.0, f64::max)
                .max(1e-12)
        })
        .collect();
    let delta_scale = match mode {
        EmulatorMode::Direct => vec![1.0; dy],
        EmulatorMode::Residual => {
            let last = layout.last_lag().ok_or_else(|| {
                Error::Config("residual mode needs lagged auxiliary states".into())
            })?;
            let delta = train
                .y
                .zip_map(&train.aux.slice_cols(last.start, last.end), |a, b| a - b);
            NormalizationStats::fit(&delta, &vec![false; dy])?
                .std()
                .to_vec()
        }
    };
    let net = DenseNet::new(spec.clone(), rng)?;
    let mut model =
        EmulatorModel::from_parts(net, mode, layout, v_stats, y_stats, delta_scale, y_bound)?;

    let x_train = model.net_input(&model.v_stats.standardize(&train.v)?, &train.aux)?;
    let t_train = model.target(&train.aux, &train.y)?;
    let x_held = model.net_input(&model.v_stats.standardize(&held.v)?, &held.aux)?;
    let t_held = model.target(&held.aux, &held.y)?;

    let mut adam = AdamState::new(cfg.adam(), model.net.params());
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut held_out_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, cfg.gamma, epoch);
        let mut total = 0.0;
        for batch in epoch_batches(train.len(), cfg.batch_size, rng) {
            let mut tape = Tape::new();
            let p = model.net.tape_params(&mut tape);
            let x = tape.constant(x_train.select_rows(&batch));
            let t = tape.constant(t_train.select_rows(&batch));
            let out = model.net.forward_tape(&mut tape, &p, x);
            let d = tape.sub(out, t);
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            let value = tape.value(loss).data()[0];
            let grads = tape.backward(loss).map_err(|_| Error::Diverged {
                what: "emulator MSE".into(),
                epoch,
            })?;
            let g: Vec<Tensor> = p
                .iter()
                .map(|&v| grads.get(v).cloned().expect("parameter gradient"))
                .collect();
            adam.step(model.net.params_mut(), &g, lr)
                .map_err(|_| Error::Diverged {
                    what: "emulator gradient".into(),
                    epoch,
                })?;
            total += value * batch.len() as f64;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                what: "emulator MSE".into(),
                epoch,
            });
        }
        loss_history.push(mean);
        let pred = model.net.forward(&x_held)?;
        held_out_history.push(mse(&pred, &t_held));
        if cfg.plateaued(&loss_history) {
            break;
        }
    }
    Ok(TrainedEmulator {
        model,
        loss_history,
        held_out_history,
    })
}

/// Mean of squared entrywise differences.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n
}

/// Relative L2 error `‖pred − truth‖ / ‖truth‖` over all entries.
pub fn relative_l2(pred: &Tensor, truth: &Tensor) -> f64 {
    let num: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = truth.data().iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::physics::{generate_dataset, lorenz::LorenzSystem, SubsampleRule, System};

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig::new(epochs, 32, 1e-2, 0.99, 0.0)
    }

    #[test]
    fn early_stop_waits_for_patience() {
        let mut cfg = tiny_cfg(10);
        assert!(!cfg.plateaued(&[1.0, 1.0, 1.0, 1.0]));
        cfg.early_stop = Some(2);
        assert!(!cfg.plateaued(&[3.0, 2.0, 1.0]));
        assert!(cfg.plateaued(&[3.0, 1.0, 1.0, 1.0]));
        assert!(!cfg.plateaued(&[3.0, 1.0, 1.0, 0.5]));
    }

    fn zero_residual(layout: AuxLayout, dv: usize) -> EmulatorModel {
        let d = layout.state_dim;
        let net = DenseNet::zeros(DenseNetSpec::new(
            dv + layout.len(),
            4,
            1,
            Activation::Silu,
            d,
        ))
        .unwrap();
        EmulatorModel::from_parts(
            net,
            EmulatorMode::Residual,
            layout,
            NormalizationStats::identity(dv),
            NormalizationStats::identity(d),
            vec![0.7; d],
            vec![10.0; d],
        )
        .unwrap()
    }

    #[test]
    fn zero_residual_net_is_identity_map() {
        let m = zero_residual(AuxLayout::lagged(2, 3), 1);
        let aux = Tensor::row_vector(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = m.emulate(&Tensor::row_vector(&[0.3]), &aux).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0]);
    }

    #[test]
    fn zero_residual_rollout_is_constant() {
        let m = zero_residual(AuxLayout::lagged(2, 2), 1);
        let seeds = vec![vec![0.5, -1.0], vec![1.5, 2.0]];
        let r = m.rollout(&seeds, 25, |n| vec![n as f64]).unwrap();
        assert_eq!(r.states.len(), 27);
        assert!(r.states[2..].iter().all(|s| s == &vec![1.5, 2.0]));
        assert_eq!(r.diverged_at, None);
        let r0 = m.rollout(&seeds, 0, |_| vec![0.0]).unwrap();
        assert_eq!(r0.states, seeds);
    }

    #[test]
    fn rollout_guard_truncates() {
        let mut m = zero_residual(AuxLayout::lagged(1, 1), 1);
        let last = m.net().biases().len() - 1;
        m.net_mut().biases_mut()[last] = Tensor::row_vector(&[50.0]);
        let r = m.rollout(&[vec![0.0]], 10, |_| vec![0.0]).unwrap();
        // each step adds 35; the bound is 10·10 = 100
        assert_eq!(r.diverged_at, Some(3));
        assert_eq!(r.states.len(), 3);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let m = zero_residual(AuxLayout::lagged(2, 3), 1);
        assert!(m
            .emulate(
                &Tensor::row_vector(&[0.3]),
                &Tensor::row_vector(&[1.0, 2.0])
            )
            .is_err());
        assert!(m
            .emulate(
                &Tensor::row_vector(&[0.3, 1.0]),
                &Tensor::row_vector(&[0.0; 6])
            )
            .is_err());
    }

    #[test]
    fn aux_names_follow_layout_order() {
        let names = AuxLayout::spatial(2, 2).names(&["c1".into(), "c2".into()]);
        assert_eq!(&names[..4], &["c1_lag2", "c2_lag2", "c1_lag1", "c2_lag1"]);
        assert_eq!(&names[4..6], &["c1_N", "c2_N"]);
        assert_eq!(names.last().unwrap(), "c2_SW");
        assert_eq!(names.len(), AuxLayout::spatial(2, 2).len());
    }

    #[test]
    fn identical_rows_are_fit_exactly() {
        let mut d = generate_dataset(&System::Linear, SubsampleRule::Whole, 64, 1).unwrap();
        let v0 = d.v.row(0).to_vec();
        let y0 = d.y.row(0).to_vec();
        for i in 0..d.len() {
            d.v.row_mut(i).copy_from_slice(&v0);
            d.y.row_mut(i).copy_from_slice(&y0);
        }
        let spec = DenseNetSpec::new(3, 3, 2, Activation::Identity, 2);
        let mut rng = Rng::new(5);
        let t = train_emulator(&d, &spec, EmulatorMode::Direct, &tiny_cfg(300), &mut rng).unwrap();
        assert!(
            *t.loss_history.last().unwrap() < 1e-8,
            "{:?}",
            t.loss_history.last()
        );
    }

    #[test]
    fn surrogate_tape_matches_emulate() {
        let sys = LorenzSystem {
            t_final: 0.2,
            ..LorenzSystem::default()
        };
        let d = generate_dataset(
            &System::Lorenz(sys),
            SubsampleRule::TimePoints {
                per_sim: 20,
                lags: 3,
            },
            5,
            2,
        )
        .unwrap();
        let spec = DenseNetSpec::new(4 + 9, 8, 2, Activation::Silu, 3);
        let mut rng = Rng::new(1);
        let m = train_emulator(&d, &spec, EmulatorMode::Residual, &tiny_cfg(3), &mut rng)
            .unwrap()
            .model;
        let direct = m.emulate(&d.v, &d.aux).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(m.v_stats().standardize(&d.v).unwrap());
        let out = m.forward_standardized(&mut tape, v, &d.aux).unwrap();
        let back = m.y_stats().destandardize(tape.value(out)).unwrap();
        assert!(back.max_abs_diff(&direct) < 1e-10);
    }
}
