//! Two-species reaction–diffusion on `[−1, 1]²` with FitzHugh–Nagumo
//! kinetics and zero-flux boundaries.
//!
//! Space is discretized with cell-centred finite volumes (5-point flux
//! stencil, ghost cells mirrored across the boundary) and time with RK4.
//! A state is stored species-major: `c[s·n² + i·n + j]`, where `i` counts
//! cells along `y` and `j` along `x`.

use serde::{Deserialize, Serialize};

use super::rk4_step;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdSystem {
    pub grid: usize,
    pub dt: f64,
    pub t_final: f64,
    pub d1_range: (f64, f64),
    pub d2_range: (f64, f64),
    pub kappa_range: (f64, f64),
    pub ic_mean: f64,
    pub ic_std: f64,
    /// Switches the reaction term off, leaving pure diffusion.
    pub reaction: bool,
    /// When set, every simulation starts from the one initial condition
    /// drawn with this seed, which makes `(D₁, D₂, κ, t, x, y) → c` a
    /// function. `None` draws a fresh initial condition per simulation.
    #[serde(default)]
    pub ic_seed: Option<u64>,
}

impl Default for RdSystem {
    fn default() -> Self {
        Self {
            grid: 32,
            dt: 0.005,
            t_final: 5.0,
            d1_range: (2e-3, 5e-3),
            d2_range: (2e-3, 5e-3),
            kappa_range: (2e-3, 5e-3),
            ic_mean: 2.0,
            ic_std: 1.0,
            reaction: true,
            ic_seed: Some(0),
        }
    }
}

/// Offsets `(di, dj)` of the eight neighbours in the fixed order
/// N, S, E, W, NE, NW, SE, SW.
pub const NEIGHBOURS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdParams {
    pub d1: f64,
    pub d2: f64,
    pub kappa: f64,
}

impl RdSystem {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.grid as f64
    }

    /// Centre `(x, y)` of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (-1.0 + (j as f64 + 0.5) * h, -1.0 + (i as f64 + 0.5) * h)
    }

    /// Cell `(i, j)` whose centre is closest to `(x, y)`; points outside the
    /// domain snap to the boundary row/column.
    pub fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let h = self.spacing();
        let idx = |u: f64| (((u + 1.0) / h).floor().max(0.0) as usize).min(self.grid - 1);
        (idx(y), idx(x))
    }

    /// i.i.d. `N(ic_mean, ic_std²)` per cell and species.
    pub fn initial_condition(&self, rng: &mut Rng) -> Vec<f64> {
        (0..2 * self.grid * self.grid)
            .map(|_| self.ic_mean + self.ic_std * rng.normal())
            .collect()
    }

    /// Initial condition of one simulation: the shared one when
    /// `ic_seed` is set, otherwise a fresh draw from `rng`.
    pub fn initial_for(&self, rng: &mut Rng) -> Vec<f64> {
        match self.ic_seed {
            Some(seed) => self.initial_condition(&mut Rng::new(seed)),
            None => self.initial_condition(rng),
        }
    }

    /// `(c₁, c₂)` in the cell nearest `(x, y)` at the grid step nearest `t`,
    /// starting from the shared initial condition.
    pub fn concentration_at(&self, p: RdParams, t: f64, x: f64, y: f64) -> Result<[f64; 2]> {
        let seed = self.ic_seed.ok_or_else(|| {
            Error::InvalidArgument(
                "re-simulation needs a shared initial condition (ic_seed)".into(),
            )
        })?;
        if !(t.is_finite() && x.is_finite() && y.is_finite()) || t < -0.5 * self.dt {
            return Err(Error::Solver {
                t,
                reason: "query time must be finite and non-negative".into(),
            });
        }
        if !(p.d1 > 0.0 && p.d2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diffusivities must be positive, got {p:?}"
            )));
        }
        let steps = (t / self.dt).round() as usize;
        let mut c = self.initial_condition(&mut Rng::new(seed));
        for s in 0..steps {
            c = self.step(p, &c, s)?;
        }
        let (i, j) = self.nearest_cell(x, y);
        Ok(self.cell(&c, i, j))
    }

    /// Semi-discrete right-hand side `D Δc + R(c)`.
    pub fn rhs(&self, p: RdParams, c: &[f64], out: &mut [f64]) {
        let n = self.grid;
        let inv_h2 = 1.0 / (self.spacing() * self.spacing());
        let nn = n * n;
        for (s, d) in [p.d1, p.d2].into_iter().enumerate() {
            let cs = &c[s * nn..(s + 1) * nn];
            for i in 0..n {
                for j in 0..n {
                    let centre = cs[i * n + j];
                    // a mirrored ghost equals the boundary cell, so its flux vanishes
                    let north = if i + 1 < n {
                        cs[(i + 1) * n + j]
                    } else {
                        centre
                    };
                    let south = if i > 0 { cs[(i - 1) * n + j] } else { centre };
                    let east = if j + 1 < n { cs[i * n + j + 1] } else { centre };
                    let west = if j > 0 { cs[i * n + j - 1] } else { centre };
                    out[s * nn + i * n + j] =
                        d * (north + south + east + west - 4.0 * centre) * inv_h2;
                }
            }
        }
        if self.reaction {
            for k in 0..nn {
                let (c1, c2) = (c[k], c[nn + k]);
                out[k] += c1 - c1 * c1 * c1 - p.kappa - c2;
                out[nn + k] += c1 - c2;
            }
        }
    }

    /// One RK4 step. `step` is only used to label a failure.
    pub fn step(&self, p: RdParams, c: &[f64], step: usize) -> Result<Vec<f64>> {
        if c.len() != 2 * self.grid * self.grid {
            return Err(Error::shape("rd_step", 2 * self.grid * self.grid, c.len()));
        }
        let t = step as f64 * self.dt;
        rk4_step(|_, y, d| self.rhs(p, y, d), c, t, self.dt).map_err(|_| Error::Solver {
            t: t + self.dt,
            reason: format!("non-finite concentration at step {}", step + 1),
        })
    }

    /// States at steps `0..=steps`.
    pub fn simulate(&self, p: RdParams, initial: Vec<f64>, steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(initial);
        for s in 0..steps {
            let next = self.step(p, &out[s], s)?;
            out.push(next);
        }
        Ok(out)
    }

    /// `(c₁, c₂)` of cell `(i, j)`.
    pub fn cell(&self, c: &[f64], i: usize, j: usize) -> [f64; 2] {
        let nn = self.grid * self.grid;
        let k = i * self.grid + j;
        [c[k], c[nn + k]]
    }

    /// Both species at the eight mirrored neighbours of `(i, j)`, in
    /// [`NEIGHBOURS`] order, flattened as `[c₁, c₂]` pairs.
    pub fn neighbours(&self, c: &[f64], i: usize, j: usize) -> [f64; 16] {
        let n = self.grid as isize;
        let mirror = |k: isize| {
            if k < 0 {
                0
            } else if k >= n {
                n - 1
            } else {
                k
            }
        };
        let mut out = [0.0; 16];
        for (slot, (di, dj)) in NEIGHBOURS.iter().enumerate() {
            let ii = mirror(i as isize + di) as usize;
            let jj = mirror(j as isize + dj) as usize;
            let [a, b] = self.cell(c, ii, jj);
            out[2 * slot] = a;
            out[2 * slot + 1] = b;
        }
        out
    }
}
