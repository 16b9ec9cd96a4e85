//! Component-wise standardization `x̄ = (x − μ)/σ`, with optional log
//! transform applied to flagged components before standardizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    mean: Vec<f64>,
    std: Vec<f64>,
    log: Vec<bool>,
}

impl NormalizationStats {
    /// Stats from explicit moments. Every `std` must be strictly positive.
    pub fn new(mean: Vec<f64>, std: Vec<f64>, log: Vec<bool>) -> Result<Self> {
        if mean.len() != std.len() || mean.len() != log.len() {
            return Err(Error::shape(
                "NormalizationStats::new",
                mean.len(),
                format!("{} std / {} flags", std.len(), log.len()),
            ));
        }
        if let Some(i) = std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "standard deviation of component {i} is {} (must be > 0)",
                std[i]
            )));
        }
        Ok(Self { mean, std, log })
    }

    /// Maps nothing: μ = 0, σ = 1.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            log: vec![false; dim],
        }
    }

    /// Fits per-column mean and (population) standard deviation of `data`.
    /// Constant columns get σ = 1.
    pub fn fit(data: &Tensor, log: &[bool]) -> Result<Self> {
        let d = data.cols();
        if log.len() != d {
            return Err(Error::shape("NormalizationStats::fit flags", d, log.len()));
        }
        if data.rows() == 0 {
            return Err(Error::Data(
                "cannot fit normalization on an empty dataset".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let n = data.rows() as f64;
        for row in data.iter_rows() {
            for j in 0..d {
                let x = if log[j] {
                    checked_ln(row[j], j)?
                } else {
                    row[j]
                };
                mean[j] += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for row in data.iter_rows() {
            for j in 0..d {
                let x = if log[j] { row[j].ln() } else { row[j] };
                sq[j] += (x - mean[j]).powi(2);
            }
        }
        let std = sq
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            log: log.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn log_flags(&self) -> &[bool] {
        &self.log
    }

    /// Stats restricted to components `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            mean: self.mean[start..end].to_vec(),
            std: self.std[start..end].to_vec(),
            log: self.log[start..end].to_vec(),
        }
    }

    /// Stats for `[self | other]`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.mean.extend_from_slice(&other.mean);
        out.std.extend_from_slice(&other.std);
        out.log.extend_from_slice(&other.log);
        out
    }

    /// This block repeated `times` times.
    pub fn repeat(&self, times: usize) -> Self {
        let mut out = Self {
            mean: vec![],
            std: vec![],
            log: vec![],
        };
        for _ in 0..times {
            out = out.concat(self);
        }
        out
    }

    pub fn standardize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let v = if self.log[j] { v.ln() } else { v };
                (v - self.mean[j]) / self.std[j]
            })
            .collect()
    }

    pub fn destandardize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let u = v * self.std[j] + self.mean[j];
                if self.log[j] {
                    u.exp()
                } else {
                    u
                }
            })
            .collect()
    }

    pub fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let rows: Vec<f64> = x
            .iter_rows()
            .flat_map(|r| self.standardize_row(r))
            .collect();
        Tensor::matrix(x.rows(), x.cols(), rows)
    }

    pub fn destandardize(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let rows: Vec<f64> = x
            .iter_rows()
            .flat_map(|r| self.destandardize_row(r))
            .collect();
        Tensor::matrix(x.rows(), x.cols(), rows)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(
                "standardize",
                format!("[n, {}]", self.dim()),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }
}

fn checked_ln(x: f64, component: usize) -> Result<f64> {
    if x > 0.0 {
        Ok(x.ln())
    } else {
        Err(Error::Data(format!(
            "log-transformed component {component} has non-positive value {x}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn mean_maps_to_zero_and_mean_plus_sigma_to_one() {
        let s =
            NormalizationStats::new(vec![2.0, -1.0], vec![0.5, 3.0], vec![false, false]).unwrap();
        assert_eq!(s.standardize_row(&[2.0, -1.0]), vec![0.0, 0.0]);
        assert_eq!(s.standardize_row(&[2.5, 2.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_sigma_is_rejected_but_fit_falls_back() {
        assert!(NormalizationStats::new(vec![0.0], vec![0.0], vec![false]).is_err());
        let data = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 4.0, 3.0, 4.0]).unwrap();
        let s = NormalizationStats::fit(&data, &[false, false]).unwrap();
        assert_eq!(s.std()[1], 1.0);
        assert!((s.std()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn round_trip_random_rows() {
        let mut rng = Rng::new(4);
        let data = rng.gaussian_matrix(200, 3).map(|v| v * 7.0 + 2.0);
        let s = NormalizationStats::fit(&data, &[false; 3]).unwrap();
        let back = s.destandardize(&s.standardize(&data).unwrap()).unwrap();
        assert!(back.max_abs_diff(&data) < 1e-12);
    }

    #[test]
    fn log_flagged_components() {
        let data = Tensor::matrix(3, 1, vec![1e-3, 2e-3, 4e-3]).unwrap();
        let s = NormalizationStats::fit(&data, &[true]).unwrap();
        assert!((s.mean()[0] - (2e-3f64).ln()).abs() < 1e-12);
        let back = s.destandardize(&s.standardize(&data).unwrap()).unwrap();
        assert!(back.max_abs_diff(&data) < 1e-15);
        assert!(
            NormalizationStats::fit(&Tensor::matrix(1, 1, vec![-1.0]).unwrap(), &[true]).is_err()
        );
    }

    proptest! {
        #[test]
        fn destandardize_inverts_standardize(
            mean in -100.0f64..100.0,
            std in 1e-3f64..1e3,
            x in -1e3f64..1e3,
        ) {
            let s = NormalizationStats::new(vec![mean], vec![std], vec![false]).unwrap();
            let back = s.destandardize_row(&s.standardize_row(&[x]))[0];
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0) * (1.0 + mean.abs() / std.max(1.0)));
        }
    }
}
