//! Three-element Windkessel (RCR) model of proximal arterial pressure.
//!
//! ```text
//! dP/dt = R_p dQ/dt + Q/C − (P − Q R_p − P_d)/(C R_d)
//! ```
//!
//! Resistances are in Barye·s/ml, capacitance in ml/Barye and flow in ml/s.
//! The solver works in Barye internally; pressures are reported in mmHg.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::rk4_step;
use crate::error::{Error, Result};

pub const BARYE_PER_MMHG: f64 = 1333.22;

/// Proximal inflow waveform `Q_p(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Inflow {
    /// Steady `baseline` flow plus a half-sine pulse of height `peak` over
    /// the first `systole` fraction of each cycle.
    HalfSine {
        #[serde(default)]
        baseline: f64,
        peak: f64,
        systole: f64,
    },
    Constant {
        flow: f64,
    },
}

impl Default for Inflow {
    fn default() -> Self {
        Inflow::HalfSine {
            baseline: 10.0,
            peak: 50.0,
            systole: 0.35,
        }
    }
}

impl Inflow {
    /// `(Q, dQ/dt)` at time `t` for a cycle of length `period`.
    pub fn eval(&self, t: f64, period: f64) -> (f64, f64) {
        match *self {
            Inflow::Constant { flow } => (flow, 0.0),
            Inflow::HalfSine {
                baseline,
                peak,
                systole,
            } => {
                let ts = systole * period;
                let tau = t.rem_euclid(period);
                if tau < ts {
                    let w = PI / ts;
                    (
                        baseline + peak * (w * tau).sin(),
                        peak * w * (w * tau).cos(),
                    )
                } else {
                    (baseline, 0.0)
                }
            }
        }
    }

    /// Cycle-averaged flow.
    pub fn mean(&self) -> f64 {
        match *self {
            Inflow::Constant { flow } => flow,
            Inflow::HalfSine {
                baseline,
                peak,
                systole,
            } => baseline + peak * 2.0 / PI * systole,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcrSystem {
    pub cycle: f64,
    pub cycles: usize,
    /// Cycles at the end of the run used for the extrema.
    pub extrema_cycles: usize,
    pub dt: f64,
    pub distal_pressure_mmhg: f64,
    pub inflow: Inflow,
    pub rp_range: (f64, f64),
    pub rd_range: (f64, f64),
    pub c_range: (f64, f64),
}

impl Default for RcrSystem {
    fn default() -> Self {
        Self {
            cycle: 1.07,
            cycles: 10,
            extrema_cycles: 3,
            dt: 0.01,
            distal_pressure_mmhg: 55.0,
            inflow: Inflow::default(),
            rp_range: (500.0, 1500.0),
            rd_range: (500.0, 1500.0),
            c_range: (1e-5, 1e-4),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RcrSolution {
    pub times: Vec<f64>,
    /// Proximal pressure in mmHg, one entry per time.
    pub pressure: Vec<f64>,
    pub p_max: f64,
    pub p_min: f64,
    steps_per_cycle: usize,
}

impl RcrSolution {
    /// Time average of the pressure over the final cycle, in mmHg.
    pub fn mean_last_cycle(&self) -> f64 {
        let n = self.pressure.len();
        let seg = &self.pressure[n - self.steps_per_cycle..];
        seg.iter().sum::<f64>() / seg.len() as f64
    }

    /// Largest pointwise change between the cycle `cycles_back` from the end
    /// (1 = last) and the cycle before it.
    pub fn cycle_to_cycle_change(&self, cycles_back: usize) -> f64 {
        let n = self.pressure.len();
        let s = self.steps_per_cycle;
        let end = n - 1 - (cycles_back - 1) * s;
        (end - s..end)
            .map(|i| (self.pressure[i] - self.pressure[i - s]).abs())
            .fold(0.0, f64::max)
    }
}

impl RcrSystem {
    pub fn steps_per_cycle(&self) -> usize {
        (self.cycle / self.dt).round() as usize
    }

    pub fn solve(&self, rp: f64, rd: f64, c: f64) -> Result<RcrSolution> {
        if !(rp > 0.0 && rd > 0.0 && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RCR parameters must be positive, got R_p={rp}, R_d={rd}, C={c}"
            )));
        }
        let spc = self.steps_per_cycle();
        let total = spc * self.cycles;
        let pd = self.distal_pressure_mmhg * BARYE_PER_MMHG;
        let inflow = self.inflow;
        let period = self.cycle;
        let rhs = |t: f64, p: &[f64], dp: &mut [f64]| {
            let (q, dq) = inflow.eval(t, period);
            dp[0] = rp * dq + q / c - (p[0] - q * rp - pd) / (c * rd);
        };
        let mut times = Vec::with_capacity(total + 1);
        let mut pressure = Vec::with_capacity(total + 1);
        let mut state = vec![0.0];
        times.push(0.0);
        pressure.push(0.0);
        for n in 0..total {
            let t = n as f64 * self.dt;
            state = rk4_step(rhs, &state, t, self.dt)?;
            times.push(t + self.dt);
            pressure.push(state[0] / BARYE_PER_MMHG);
        }
        let window = &pressure[total - self.extrema_cycles.min(self.cycles) * spc..];
        let p_max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p_min = window.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(RcrSolution {
            times,
            pressure,
            p_max,
            p_min,
            steps_per_cycle: spc,
        })
    }

    /// `(P_max, P_min)` in mmHg.
    pub fn extrema(&self, rp: f64, rd: f64, c: f64) -> Result<[f64; 2]> {
        let s = self.solve(rp, rd, c)?;
        Ok([s.p_max, s.p_min])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_inflow_reaches_algebraic_steady_state() {
        let q = 90.0;
        let sys = RcrSystem {
            inflow: Inflow::Constant { flow: q },
            ..RcrSystem::default()
        };
        let (rp, rd) = (800.0, 1200.0);
        let s = sys.solve(rp, rd, 5e-5).unwrap();
        let expected = 55.0 + q * (rp + rd) / BARYE_PER_MMHG;
        let last = *s.pressure.last().unwrap();
        assert!(
            (last - expected).abs() / expected < 5e-3,
            "{last} vs {expected}"
        );
    }

    #[test]
    fn larger_compliance_lowers_pulse_pressure() {
        let sys = RcrSystem::default();
        let a = sys.solve(1000.0, 1000.0, 3e-5).unwrap();
        let b = sys.solve(1000.0, 1000.0, 6e-5).unwrap();
        assert!(b.p_max - b.p_min < a.p_max - a.p_min);
    }

    #[test]
    fn mean_pressure_depends_on_total_resistance() {
        let sys = RcrSystem::default();
        let a = sys.solve(500.0, 1500.0, 5e-5).unwrap().mean_last_cycle();
        let b = sys.solve(1500.0, 500.0, 5e-5).unwrap().mean_last_cycle();
        assert!((a - b).abs() / a < 0.01, "{a} vs {b}");
    }

    #[test]
    fn periodic_regime_after_seven_cycles() {
        let sys = RcrSystem::default();
        let s = sys.solve(1000.0, 1500.0, 1e-4).unwrap();
        let change = s.cycle_to_cycle_change(3);
        assert!(
            change / s.p_max < 1e-3,
            "relative change {}",
            change / s.p_max
        );
        assert!(s.p_max > s.p_min);
    }

    #[test]
    fn diastolic_pressure_tracks_total_resistance() {
        let sys = RcrSystem::default();
        let low = sys.extrema(600.0, 600.0, 5e-5).unwrap()[1];
        let high = sys.extrema(1400.0, 1400.0, 5e-5).unwrap()[1];
        assert!(high - low > 5.0, "P_min {low} vs {high}");
    }
}
