//! Re-simulating decoded inputs and scoring them against the target.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Oracle;
use super::metrics::{zeta, Summary};
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::physics::rd::RdParams;
use crate::physics::{Experiment, System};
use crate::sampling::{Provenance, Strategy};
use crate::tensor::Tensor;

/// Exact output of `system` at the input row `v`. Time-dependent systems
/// are integrated up to the time stored in `v`.
pub fn exact_output(system: &System, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != system.input_names().len() {
        return Err(Error::shape(
            "exact_output",
            system.input_names().len(),
            v.len(),
        ));
    }
    match system {
        System::Lorenz(s) => Ok(s.state_at(v[0], v[1], v[2], v[3])?.to_vec()),
        System::ReactionDiffusion(s) => {
            let p = RdParams {
                d1: v[0],
                d2: v[1],
                kappa: v[2],
            };
            Ok(s.concentration_at(p, v[3], v[4], v[5])?.to_vec())
        }
        _ => system.forward_static(v),
    }
}

/// Output predicted by the emulator at `v`.
///
/// Static systems are a single evaluation. For Lorenz the first `lags`
/// states come from the solver and the emulator rolls forward to the grid
/// step nearest `t̂`.
pub fn emulated_output(system: &System, emulator: &EmulatorModel, v: &[f64]) -> Result<Vec<f64>> {
    match system {
        System::Lorenz(s) => {
            let lags = emulator.layout().lags;
            let t = v[3];
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Solver {
                    t,
                    reason: "decoded time is negative".into(),
                });
            }
            let target = (t / s.dt).round() as usize;
            let seeds: Vec<Vec<f64>> = s.trajectory(v[0], v[1], v[2], lags - 1)?.iter().map(|x| x.to_vec()).collect();
            if target < lags {
                return Ok(seeds[target].clone());
            }
            let params = [v[0], v[1], v[2]];
            let roll = emulator.rollout(&seeds, target + 1 - lags, |n| vec![params[0], params[1], params[2], n as f64 * s.dt])?;
            if let Some(at) = roll.diverged_at {
                return Err(Error::Solver {
                    t: at as f64 * s.dt,
                    reason: "emulator rollout left the training range".into(),
                });
            }
            Ok(roll.states[target].clone())
        }
        System::ReactionDiffusion(_) => Err(Error::InvalidArgument(
            "the emulator oracle needs neighbouring cells and is not available for the reaction-diffusion system".into(),
        )),
        _ => Ok(emulator.emulate(&Tensor::row_vector(v), &Tensor::zeros(&[1, 0]))?.data().to_vec()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifiedRow {
    /// Position in the inversion sample set.
    pub index: usize,
    pub v_hat: Vec<f64>,
    pub y_hat: Option<Vec<f64>>,
    pub zeta: Option<f64>,
    /// Solver or emulator failure for this row.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterrogationReport {
    pub experiment: Experiment,
    pub y_star: Vec<f64>,
    pub strategy: Option<Strategy>,
    pub provenance: Option<Provenance>,
    pub oracle: Oracle,
    pub reject_above: Option<f64>,
    /// Rows removed by the rejection filter (including failed rows).
    pub rejected: Vec<usize>,
    pub rows: Vec<VerifiedRow>,
    /// Statistics of ζ over the kept rows that verified.
    pub summary: Summary,
}

impl InterrogationReport {
    pub fn zetas(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.zeta).collect()
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    /// Fraction of the kept rows with `ζ ≤ threshold`; failed rows count as
    /// misses.
    pub fn fraction_within(&self, threshold: f64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows
            .iter()
            .filter(|r| r.zeta.is_some_and(|z| z <= threshold))
            .count() as f64
            / self.rows.len() as f64
    }

    /// Summary recomputed from the rows.
    pub fn recompute_summary(&self) -> Summary {
        Summary::of(&self.zetas())
    }

    /// One row per sample: index, inputs, re-simulated outputs, ζ, status.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        input_names: &[String],
        output_names: &[String],
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["index".into()];
        header.extend(input_names.iter().cloned());
        header.extend(output_names.iter().map(|n| format!("{n}_hat")));
        header.extend(["zeta".to_string(), "status".to_string()]);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.index.to_string()];
            rec.extend(row.v_hat.iter().map(f64::to_string));
            match &row.y_hat {
                Some(y) => rec.extend(y.iter().map(f64::to_string)),
                None => rec.extend(output_names.iter().map(|_| String::new())),
            }
            rec.push(row.zeta.map(|z| z.to_string()).unwrap_or_default());
            rec.push(
                row.failure
                    .clone()
                    .map_or_else(|| "ok".to_string(), |f| format!("failed: {f}")),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path, system: &System) -> Result<()> {
        self.write_csv(
            std::fs::File::create(dir.join("verification.csv"))?,
            &system.input_names(),
            &system.output_names(),
        )?;
        std::fs::write(
            dir.join("verification.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Where re-simulated outputs come from.
pub enum Verifier<'a> {
    Exact(&'a System),
    Emulator(&'a System, &'a EmulatorModel),
}

impl Verifier<'_> {
    pub fn oracle(&self) -> Oracle {
        match self {
            Verifier::Exact(_) => Oracle::Exact,
            Verifier::Emulator(..) => Oracle::Emulator,
        }
    }

    fn system(&self) -> &System {
        match self {
            Verifier::Exact(s) | Verifier::Emulator(s, _) => s,
        }
    }

    pub fn output(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Verifier::Exact(s) => exact_output(s, v),
            Verifier::Emulator(s, e) => emulated_output(s, e, v),
        }
    }
}

/// Re-simulates every row of `v_hat` and scores it with ζ against `y_star`.
///
/// A row whose simulation fails is kept and marked; the run continues.
/// With `reject_above`, rows with ζ above the threshold (or no ζ at all)
/// are removed from the report and listed in `rejected`.
pub fn verify_inversion(
    verifier: &Verifier<'_>,
    v_hat: &Tensor,
    y_star: &[f64],
    reject_above: Option<f64>,
    strategy: Option<Strategy>,
    provenance: Option<Provenance>,
) -> Result<InterrogationReport> {
    let system = verifier.system();
    if v_hat.cols() != system.input_names().len() && v_hat.rows() > 0 {
        return Err(Error::shape(
            "verify_inversion inputs",
            system.input_names().len(),
            v_hat.cols(),
        ));
    }
    if y_star.len() != system.state_dim() {
        return Err(Error::shape(
            "verify_inversion y*",
            system.state_dim(),
            y_star.len(),
        ));
    }
    if y_star.iter().all(|&y| y == 0.0) {
        return Err(Error::InvalidArgument(
            "ζ is undefined for a zero target".into(),
        ));
    }
    if matches!(
        verifier,
        Verifier::Emulator(System::ReactionDiffusion(_), _)
    ) {
        verifier.output(&[0.0; 6])?;
    }
    let mut rows = Vec::with_capacity(v_hat.rows());
    let mut rejected = Vec::new();
    for (index, v) in v_hat.iter_rows().enumerate() {
        let row = match verifier.output(v) {
            Ok(y) => VerifiedRow {
                index,
                v_hat: v.to_vec(),
                zeta: Some(zeta(y_star, &y)?),
                y_hat: Some(y),
                failure: None,
            },
            Err(e) => VerifiedRow {
                index,
                v_hat: v.to_vec(),
                y_hat: None,
                zeta: None,
                failure: Some(e.to_string()),
            },
        };
        let keep = match reject_above {
            Some(thr) => row.zeta.is_some_and(|z| z <= thr),
            None => true,
        };
        if keep {
            rows.push(row);
        } else {
            rejected.push(index);
        }
    }
    let summary = Summary::of(&rows.iter().filter_map(|r| r.zeta).collect::<Vec<_>>());
    Ok(InterrogationReport {
        experiment: system.experiment(),
        y_star: y_star.to_vec(),
        strategy,
        provenance,
        oracle: verifier.oracle(),
        reject_above,
        rejected,
        rows,
        summary,
    })
}
