//! The under-determined map `y = F v` with `F = [[π, e, 0], [0, e, π]]`.

use std::f64::consts::{E, PI};

pub const MATRIX: [[f64; 3]; 2] = [[PI, E, 0.0], [0.0, E, PI]];

/// Inputs are drawn uniformly from this box in every component.
pub const PRIOR: (f64, f64) = (0.0, 5.0);

pub fn forward(v: &[f64]) -> [f64; 2] {
    assert_eq!(v.len(), 3, "linear system takes 3 inputs");
    let mut y = [0.0; 2];
    for (yi, row) in y.iter_mut().zip(MATRIX) {
        *yi = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    y
}

/// Unit vector spanning the null space of `F`, first component positive.
///
/// It is the normalized cross product of the two rows.
pub fn kernel() -> [f64; 3] {
    let [a, b] = MATRIX;
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if c[0] < 0.0 { -1.0 } else { 1.0 };
    c.map(|x| sign * x / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_read_off() {
        assert_eq!(forward(&[1.0, 0.0, 0.0]), [PI, 0.0]);
        assert_eq!(forward(&[0.0, 1.0, 0.0]), [E, E]);
    }

    #[test]
    fn kernel_matches_reference_and_is_annihilated() {
        let k = kernel();
        let expected = [0.5475278, -0.6327928, 0.5475278];
        for (a, b) in k.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
        let fk = forward(&k);
        assert!(fk.iter().all(|x| x.abs() < 1e-12));
    }
}
