//! `y = sin(k x)` with `k ∈ [1, 3]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSystem {
    pub k_range: (f64, f64),
    pub x_range: (f64, f64),
}

impl SineSystem {
    /// `x ∈ [−π/6, π/6]`: the map is monotone in `x` for every `k`.
    pub fn non_periodic() -> Self {
        Self {
            k_range: (1.0, 3.0),
            x_range: (-PI / 6.0, PI / 6.0),
        }
    }

    /// `x ∈ [−π, π]`: several periods, so each level set has many branches.
    pub fn periodic() -> Self {
        Self {
            k_range: (1.0, 3.0),
            x_range: (-PI, PI),
        }
    }
}

pub fn forward(k: f64, x: f64) -> f64 {
    (k * x).sin()
}
