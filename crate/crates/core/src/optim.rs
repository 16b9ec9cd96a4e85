//! Adam with decoupled weight decay, and the exponential learning-rate
//! schedule `η(z) = η₀·γᶻ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update. Weight decay is decoupled:
    /// `p ← p − lr·(m̂/(√v̂+ε) + d·p)`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                self.first.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    format!("adam_step param {i}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("adam_step gradient {i}"),
                    node: None,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            for k in 0..pd.len() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let mhat = m.data()[k] / bc1;
                let vhat = v.data()[k] / bc2;
                pd[k] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * pd[k]);
            }
        }
        Ok(())
    }
}

/// Learning rate at `epoch`: `eta0 · gamma^epoch`.
pub fn lr_at(eta0: f64, gamma: f64, epoch: usize) -> f64 {
    eta0 * gamma.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = Tensor::row_vector(&[1.0, -2.0, 3.5]);
        let orig = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..50 {
            adam.step(vec![&mut p], &[Tensor::zeros(&[1, 3])], 0.1)
                .unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::row_vector(&[0.0, 0.0, 0.0]);
        let g = Tensor::row_vector(&[0.3, -5.0, 1e-3]);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step(vec![&mut p], &[g.clone()], 0.01).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        for (pk, gk) in p.data().iter().zip(g.data()) {
            let expected = -0.01 * gk / (gk.abs() + 1e-8);
            assert!((pk - expected).abs() < 1e-12);
            assert!((pk.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let mut p = Tensor::row_vector(&[2.0, -4.0]);
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&p]);
        adam.step(vec![&mut p], &[Tensor::zeros(&[1, 2])], 0.5)
            .unwrap();
        assert!((p.data()[0] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-15);
        assert!((p.data()[1] + 4.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam
            .step(vec![&mut p], &[Tensor::scalar(f64::NAN)], 0.1)
            .is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn exponential_schedule() {
        assert_eq!(lr_at(0.01, 0.98, 0), 0.01);
        assert!((lr_at(0.01, 0.98, 1) - 0.0098).abs() < 1e-15);
        let direct = 1e-3 * (1000.0 * 0.999f64.ln()).exp();
        assert!((lr_at(1e-3, 0.999, 1000) - direct).abs() < 1e-15);
        assert!((lr_at(1e-3, 0.999, 1000) - 3.677e-4).abs() < 1e-7);
    }
}
