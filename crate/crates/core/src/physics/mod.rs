//! Exact forward models for the benchmark problems and the dataset
//! generator that turns them into `(v, aux, y)` records.

mod dataset;
pub mod linear;
pub mod lorenz;
pub mod rcr;
pub mod rd;
pub mod sine;

pub(crate) use dataset::pick_distinct;
pub use dataset::{generate_dataset, Dataset, SubsampleRule, System};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Benchmark identifiers. The string forms are used in config files,
/// dataset sidecars and model headers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "sine")]
    Sine,
    #[serde(rename = "sine-periodic")]
    SinePeriodic,
    #[serde(rename = "rcr")]
    Rcr,
    #[serde(rename = "lorenz")]
    Lorenz,
    #[serde(rename = "rd")]
    ReactionDiffusion,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Linear,
        Experiment::Sine,
        Experiment::SinePeriodic,
        Experiment::Rcr,
        Experiment::Lorenz,
        Experiment::ReactionDiffusion,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Experiment::Linear => "linear",
            Experiment::Sine => "sine",
            Experiment::SinePeriodic => "sine-periodic",
            Experiment::Rcr => "rcr",
            Experiment::Lorenz => "lorenz",
            Experiment::ReactionDiffusion => "rd",
        }
    }

    /// Time-stepping systems learn a residual flow map from lagged states.
    pub fn is_dynamical(self) -> bool {
        matches!(self, Experiment::Lorenz | Experiment::ReactionDiffusion)
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

/// One classical fourth-order Runge–Kutta step of `dy/dt = rhs(t, y)`.
///
/// `rhs(t, y, dy)` writes the derivative into `dy`.
pub fn rk4_step<F>(rhs: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    rhs(t, state, &mut k1);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    rhs(t + dt, &tmp, &mut k4);

    let next: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Solver {
            t: t + dt,
            reason: "non-finite state after RK4 step".into(),
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(steps: usize, dt: f64) -> f64 {
        let mut y = vec![1.0];
        for s in 0..steps {
            y = rk4_step(|_, y, d| d[0] = -y[0], &y, s as f64 * dt, dt).unwrap();
        }
        y[0]
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let y = rk4_step(|_, _, d| d.fill(0.0), &[1.0, -2.0], 0.0, 0.3).unwrap();
        assert_eq!(y, vec![1.0, -2.0]);
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        assert!((decay(10, 0.1) - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn observed_order_is_four() {
        let exact = (-1.0f64).exp();
        let e1 = (decay(10, 0.1) - exact).abs();
        let e2 = (decay(20, 0.05) - exact).abs();
        let order = (e1 / e2).log2();
        assert!((3.8..=4.2).contains(&order), "order {order}");
    }

    #[test]
    fn blow_up_reports_time() {
        let err = rk4_step(|_, _, d| d[0] = f64::INFINITY, &[0.0], 2.0, 0.5).unwrap_err();
        match err {
            Error::Solver { t, .. } => assert_eq!(t, 2.5),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tags_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.tag().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }
}
