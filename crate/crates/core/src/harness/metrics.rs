//! Error measures and summaries used when checking an inversion.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative output error `ζ = ‖y* − ŷ*‖₂ / ‖y*‖₂`.
pub fn zeta(y_star: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y_star.len() != y_hat.len() {
        return Err(Error::shape("zeta", y_star.len(), y_hat.len()));
    }
    let norm = y_star.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "ζ is undefined for a zero target".into(),
        ));
    }
    let diff = y_star
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Unit direction of the least-squares line through the rows of `points`,
/// signed so that its first nonzero component is positive.
pub fn fit_line_direction(points: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 || d == 0 {
        return Err(Error::InvalidArgument(
            "a line fit needs at least two points".into(),
        ));
    }
    let mean: Vec<f64> = (0..d)
        .map(|k| points.iter_rows().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for r in points.iter_rows() {
        for a in 0..d {
            for b in 0..d {
                scatter[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let eig = SymmetricEigen::new(scatter);
    let (k, &top) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("d > 0");
    if !(top > 0.0) {
        return Err(Error::InvalidArgument(
            "points are all identical; no direction to fit".into(),
        ));
    }
    let mut dir: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= norm);
    if dir
        .iter()
        .find(|x| x.abs() > 1e-12)
        .is_some_and(|&x| x < 0.0)
    {
        dir.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(dir)
}

/// `|cos ∠(a, b)|`.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Linear-interpolated quantile of `values` (`q ∈ [0, 1]`); `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Order statistics of a set of ζ values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: Option<f64>,
    pub q10: Option<f64>,
    pub median: Option<f64>,
    pub q90: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        Self {
            count: values.len(),
            min: quantile(values, 0.0),
            q10: quantile(values, 0.1),
            median: quantile(values, 0.5),
            q90: quantile(values, 0.9),
            max: quantile(values, 1.0),
            mean,
        }
    }

    /// Fraction of `values` at or below `threshold`.
    pub fn fraction_below(values: &[f64], threshold: f64) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        values.iter().filter(|&&v| v <= threshold).count() as f64 / values.len() as f64
    }
}

/// Trace of the sample covariance of the rows of `x`.
pub fn covariance_trace(x: &Tensor) -> f64 {
    let n = x.rows();
    if n < 2 {
        return 0.0;
    }
    (0..x.cols())
        .map(|k| {
            let mean = x.iter_rows().map(|r| r[k]).sum::<f64>() / n as f64;
            x.iter_rows().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((zeta(&[3.0, 4.0], &[3.3, 4.4]).unwrap() - 0.1).abs() < 1e-15);
        assert!((zeta(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(zeta(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn zeta_is_rotation_invariant() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let (y, yh) = ([1.5, -2.0], [1.2, -2.5]);
        let a = zeta(&y, &yh).unwrap();
        let b = zeta(&rot(y), &rot(yh)).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn line_through_collinear_points() {
        let pts = Tensor::from_rows(
            &[
                vec![0.0, 0.0, 0.0],
                vec![1.0, 1.0, 1.0],
                vec![-2.0, -2.0, -2.0],
                vec![5.0, 5.0, 5.0],
            ],
            3,
        )
        .unwrap();
        let d = fit_line_direction(&pts).unwrap();
        let e = 1.0 / 3f64.sqrt();
        for x in d {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn two_points_give_the_chord() {
        let pts = Tensor::from_rows(&[vec![1.0, 2.0], vec![-2.0, 6.0]], 2).unwrap();
        let d = fit_line_direction(&pts).unwrap();
        assert!(
            (d[0] - 0.6).abs() < 1e-12 && (d[1] + 0.8).abs() < 1e-12,
            "{d:?}"
        );
    }

    #[test]
    fn identical_points_are_rejected() {
        let pts = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], 2).unwrap();
        assert!(fit_line_direction(&pts).is_err());
    }

    #[test]
    fn summary_matches_sorted_values() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        let s = Summary::of(&v);
        assert_eq!(
            (s.min, s.median, s.max, s.mean),
            (Some(1.0), Some(3.0), Some(5.0), Some(3.0))
        );
        assert_eq!(Summary::fraction_below(&v, 2.0), 0.4);
        assert_eq!(Summary::of(&[]).median, None);
    }
}
