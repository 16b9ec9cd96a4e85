//! Lorenz convection model
//!
//! ```text
//! dx/dt = Pr (y − x)
//! dy/dt = x (Ra − z) − y
//! dz/dt = x y − b z
//! ```

use serde::{Deserialize, Serialize};

use super::rk4_step;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzSystem {
    pub initial: [f64; 3],
    pub dt: f64,
    pub t_final: f64,
    pub pr_range: (f64, f64),
    pub ra_range: (f64, f64),
    pub b_range: (f64, f64),
}

impl Default for LorenzSystem {
    fn default() -> Self {
        let b = 8.0 / 3.0;
        Self {
            initial: [0.0, 1.0, 0.0],
            dt: 5e-4,
            t_final: 4.0,
            pr_range: (8.0, 12.0),
            ra_range: (26.0, 30.0),
            b_range: (b - 1.0, b + 1.0),
        }
    }
}

pub fn rhs(pr: f64, ra: f64, b: f64, s: &[f64], d: &mut [f64]) {
    d[0] = pr * (s[1] - s[0]);
    d[1] = s[0] * (ra - s[2]) - s[1];
    d[2] = s[0] * s[1] - b * s[2];
}

impl LorenzSystem {
    /// Number of grid steps up to `t_final`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// States at `0, dt, …, steps·dt` (inclusive), starting from `initial`.
    pub fn trajectory(&self, pr: f64, ra: f64, b: f64, steps: usize) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut s = self.initial.to_vec();
        out.push(self.initial);
        for n in 0..steps {
            s = rk4_step(
                |_, y, d| rhs(pr, ra, b, y, d),
                &s,
                n as f64 * self.dt,
                self.dt,
            )?;
            out.push([s[0], s[1], s[2]]);
        }
        Ok(out)
    }

    /// State at an arbitrary time `t ≥ 0`: whole steps on the grid followed
    /// by one partial step landing exactly on `t`.
    pub fn state_at(&self, pr: f64, ra: f64, b: f64, t: f64) -> Result<[f64; 3]> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Solver {
                t,
                reason: "Lorenz end time must be finite and non-negative".into(),
            });
        }
        // the small nudge keeps grid times like 400·dt from rounding down a step
        let whole = (t / self.dt + 1e-9).floor() as usize;
        let mut s = self.initial.to_vec();
        for n in 0..whole {
            s = rk4_step(
                |_, y, d| rhs(pr, ra, b, y, d),
                &s,
                n as f64 * self.dt,
                self.dt,
            )?;
        }
        let rest = t - whole as f64 * self.dt;
        if rest > 1e-12 * self.dt {
            s = rk4_step(
                |_, y, d| rhs(pr, ra, b, y, d),
                &s,
                whole as f64 * self.dt,
                rest,
            )?;
        }
        Ok([s[0], s[1], s[2]])
    }
}
