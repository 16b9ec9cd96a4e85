use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::lorenz::LorenzSystem;
use super::rcr::RcrSystem;
use super::rd::{RdParams, RdSystem};
use super::sine::SineSystem;
use super::{linear, sine, Experiment};
use crate::emulator::AuxLayout;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A forward problem together with its prior box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum System {
    Linear,
    Sine(SineSystem),
    SinePeriodic(SineSystem),
    Rcr(RcrSystem),
    Lorenz(LorenzSystem),
    #[serde(rename = "rd")]
    ReactionDiffusion(RdSystem),
}

/// How records are extracted from each simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SubsampleRule {
    /// One record per prior draw (static maps).
    Whole,
    /// `per_sim` random grid times per trajectory, with `lags` previous
    /// states as auxiliary data.
    TimePoints { per_sim: usize, lags: usize },
    /// `cells` random cells at each of `times` random grid times.
    CellsTimes {
        cells: usize,
        times: usize,
        lags: usize,
    },
}

impl System {
    pub fn experiment(&self) -> Experiment {
        match self {
            System::Linear => Experiment::Linear,
            System::Sine(_) => Experiment::Sine,
            System::SinePeriodic(_) => Experiment::SinePeriodic,
            System::Rcr(_) => Experiment::Rcr,
            System::Lorenz(_) => Experiment::Lorenz,
            System::ReactionDiffusion(_) => Experiment::ReactionDiffusion,
        }
    }

    /// Default system for an experiment tag.
    pub fn for_experiment(e: Experiment) -> Self {
        match e {
            Experiment::Linear => System::Linear,
            Experiment::Sine => System::Sine(SineSystem::non_periodic()),
            Experiment::SinePeriodic => System::SinePeriodic(SineSystem::periodic()),
            Experiment::Rcr => System::Rcr(RcrSystem::default()),
            Experiment::Lorenz => System::Lorenz(LorenzSystem::default()),
            Experiment::ReactionDiffusion => System::ReactionDiffusion(RdSystem::default()),
        }
    }

    pub fn input_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            System::Linear => &["v1", "v2", "v3"],
            System::Sine(_) | System::SinePeriodic(_) => &["k", "x"],
            System::Rcr(_) => &["Rp", "Rd", "C"],
            System::Lorenz(_) => &["Pr", "Ra", "b", "t"],
            System::ReactionDiffusion(_) => &["D1", "D2", "kappa", "t", "x", "y"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            System::Linear => &["y1", "y2"],
            System::Sine(_) | System::SinePeriodic(_) => &["y"],
            System::Rcr(_) => &["Pmax", "Pmin"],
            System::Lorenz(_) => &["X", "Y", "Z"],
            System::ReactionDiffusion(_) => &["c1", "c2"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Inputs that are log-transformed before standardization.
    pub fn input_log_flags(&self) -> Vec<bool> {
        match self {
            System::ReactionDiffusion(_) => vec![true, true, true, false, false, false],
            _ => vec![false; self.input_names().len()],
        }
    }

    /// Prior box of every input component. Time and space coordinates use
    /// the extent of their grids.
    pub fn input_ranges(&self) -> Vec<(f64, f64)> {
        match self {
            System::Linear => vec![linear::PRIOR; 3],
            System::Sine(s) | System::SinePeriodic(s) => vec![s.k_range, s.x_range],
            System::Rcr(s) => vec![s.rp_range, s.rd_range, s.c_range],
            System::Lorenz(s) => vec![s.pr_range, s.ra_range, s.b_range, (0.0, s.t_final)],
            System::ReactionDiffusion(s) => vec![
                s.d1_range,
                s.d2_range,
                s.kappa_range,
                (0.0, s.t_final),
                (-1.0, 1.0),
                (-1.0, 1.0),
            ],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.output_names().len()
    }

    /// Auxiliary layout implied by `rule`.
    pub fn layout(&self, rule: &SubsampleRule) -> Result<AuxLayout> {
        match (self, rule) {
            (
                System::Linear | System::Sine(_) | System::SinePeriodic(_) | System::Rcr(_),
                SubsampleRule::Whole,
            ) => Ok(AuxLayout::none()),
            (System::Lorenz(_), SubsampleRule::TimePoints { lags, .. }) if *lags >= 1 => {
                Ok(AuxLayout::lagged(3, *lags))
            }
            (System::ReactionDiffusion(_), SubsampleRule::CellsTimes { lags, .. })
                if *lags >= 1 =>
            {
                Ok(AuxLayout::spatial(2, *lags))
            }
            _ => Err(Error::Config(format!(
                "subsample rule {rule:?} does not apply to the {} system",
                self.experiment()
            ))),
        }
    }

    /// Exact forward map for a static system: `y = F(v)`.
    pub fn forward_static(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            System::Linear => Ok(linear::forward(v).to_vec()),
            System::Sine(_) | System::SinePeriodic(_) => Ok(vec![sine::forward(v[0], v[1])]),
            System::Rcr(s) => Ok(s.extrema(v[0], v[1], v[2])?.to_vec()),
            _ => Err(Error::InvalidArgument(format!(
                "{} is a time-dependent system",
                self.experiment()
            ))),
        }
    }

    fn draw_parameters(&self, rng: &mut Rng) -> Vec<f64> {
        let ranges = self.input_ranges();
        let n_params = match self {
            System::Lorenz(_) => 3,
            System::ReactionDiffusion(_) => 3,
            _ => ranges.len(),
        };
        ranges[..n_params]
            .iter()
            .map(|&(lo, hi)| rng.uniform_in(lo, hi))
            .collect()
    }
}

/// Records `(v, aux, y)` produced by [`generate_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: System,
    pub rule: SubsampleRule,
    pub seed: u64,
    pub layout: AuxLayout,
    pub v: Tensor,
    pub aux: Tensor,
    pub y: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    experiment: Experiment,
    seed: u64,
    records: usize,
    system: System,
    rule: SubsampleRule,
    layout: AuxLayout,
    input_names: Vec<String>,
    output_names: Vec<String>,
    aux_names: Vec<String>,
    input_log: Vec<bool>,
    input_ranges: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn experiment(&self) -> Experiment {
        self.system.experiment()
    }

    pub fn len(&self) -> usize {
        self.v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            v: self.v.select_rows(idx),
            aux: self.aux.select_rows(idx),
            y: self.y.select_rows(idx),
            ..self.clone()
        }
    }

    /// Seeded split into `(train, held_out)` with `frac` of the records
    /// (rounded down, at least one) held out.
    pub fn split(&self, frac: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).shuffle(&mut idx);
        let n_test = ((self.len() as f64 * frac) as usize).clamp(1.min(self.len()), self.len());
        let (test, train) = idx.split_at(n_test);
        (self.subset(train), self.subset(test))
    }

    fn header(&self) -> Vec<String> {
        let mut h = self.system.input_names();
        h.extend(self.layout.names(&self.system.output_names()));
        h.extend(self.system.output_names());
        h
    }

    /// Path of the JSON sidecar that accompanies a dataset CSV.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes `path` (CSV, one record per row) and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let row = self
                .v
                .row(i)
                .iter()
                .chain(self.aux.row(i))
                .chain(self.y.row(i));
            w.write_record(row.map(|x| x.to_string()))?;
        }
        w.flush()?;
        let side = Sidecar {
            experiment: self.experiment(),
            seed: self.seed,
            records: self.len(),
            system: self.system.clone(),
            rule: self.rule,
            layout: self.layout,
            input_names: self.system.input_names(),
            output_names: self.system.output_names(),
            aux_names: self.layout.names(&self.system.output_names()),
            input_log: self.system.input_log_flags(),
            input_ranges: self.system.input_ranges(),
        };
        let mut f = BufWriter::new(File::create(Self::sidecar_path(path))?);
        serde_json::to_writer_pretty(&mut f, &side)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: Sidecar =
            serde_json::from_reader(BufReader::new(File::open(Self::sidecar_path(path))?))?;
        let (dv, da, dy) = (
            side.input_names.len(),
            side.aux_names.len(),
            side.output_names.len(),
        );
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let expected: Vec<String> = side
            .input_names
            .iter()
            .chain(&side.aux_names)
            .chain(&side.output_names)
            .cloned()
            .collect();
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(Error::Data(format!(
                "{}: header does not match sidecar layout",
                path.display()
            )));
        }
        let (mut v, mut aux, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("{} record {}: {e}", path.display(), line + 1)))?;
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "{} record {}: non-finite value",
                    path.display(),
                    line + 1
                )));
            }
            v.extend_from_slice(&vals[..dv]);
            aux.extend_from_slice(&vals[dv..dv + da]);
            y.extend_from_slice(&vals[dv + da..]);
        }
        let n = v.len() / dv.max(1);
        if n != side.records {
            return Err(Error::Data(format!(
                "{}: sidecar declares {} records, found {n}",
                path.display(),
                side.records
            )));
        }
        Ok(Self {
            system: side.system,
            rule: side.rule,
            seed: side.seed,
            layout: side.layout,
            v: Tensor::matrix(n, dv, v)?,
            aux: Tensor::matrix(n, da, aux)?,
            y: Tensor::matrix(n, dy, y)?,
        })
    }
}

/// Simulates `n_sims` prior draws and assembles records according to `rule`.
///
/// Simulation `i` draws from substream `i` of `seed`, so the output depends
/// only on `(system, rule, n_sims, seed)`.
pub fn generate_dataset(
    system: &System,
    rule: SubsampleRule,
    n_sims: usize,
    seed: u64,
) -> Result<Dataset> {
    let layout = system.layout(&rule)?;
    let root = Rng::new(seed);
    let (dv, dy) = (system.input_names().len(), system.state_dim());
    let (mut v, mut aux, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for sim in 0..n_sims {
        let mut rng = root.substream(sim as u64);
        let params = system.draw_parameters(&mut rng);
        match (system, rule) {
            (System::Lorenz(sys), SubsampleRule::TimePoints { per_sim, lags }) => {
                let traj = sys.trajectory(params[0], params[1], params[2], sys.steps())?;
                for n in pick_distinct(&mut rng, lags, sys.steps(), per_sim) {
                    v.extend_from_slice(&params);
                    v.push(n as f64 * sys.dt);
                    for s in &traj[n - lags..n] {
                        aux.extend_from_slice(s);
                    }
                    y.extend_from_slice(&traj[n]);
                }
            }
            (System::ReactionDiffusion(sys), SubsampleRule::CellsTimes { cells, times, lags }) => {
                let p = RdParams {
                    d1: params[0],
                    d2: params[1],
                    kappa: params[2],
                };
                let ic = sys.initial_for(&mut rng);
                let states = sys.simulate(p, ic, sys.steps())?;
                let n_cells = sys.grid * sys.grid;
                for n in pick_distinct(&mut rng, lags, sys.steps(), times) {
                    for k in pick_distinct(&mut rng, 0, n_cells - 1, cells) {
                        let (i, j) = (k / sys.grid, k % sys.grid);
                        let (x, yc) = sys.cell_center(i, j);
                        v.extend_from_slice(&params);
                        v.extend_from_slice(&[n as f64 * sys.dt, x, yc]);
                        for s in &states[n - lags..n] {
                            aux.extend_from_slice(&sys.cell(s, i, j));
                        }
                        aux.extend_from_slice(&sys.neighbours(&states[n - 1], i, j));
                        y.extend_from_slice(&sys.cell(&states[n], i, j));
                    }
                }
            }
            (_, SubsampleRule::Whole) => {
                y.extend(system.forward_static(&params)?);
                v.extend(params);
            }
            _ => unreachable!("layout() validated the rule"),
        }
    }
    let n = v.len() / dv;
    Ok(Dataset {
        system: system.clone(),
        rule,
        seed,
        layout,
        v: Tensor::matrix(n, dv, v)?,
        aux: Tensor::matrix(n, layout.len(), aux)?,
        y: Tensor::matrix(n, dy, y)?,
    })
}

/// `count` distinct integers from `lo..=hi` (all of them if the range is
/// smaller), in the order drawn.
pub(crate) fn pick_distinct(rng: &mut Rng, lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (lo..=hi).collect();
    let k = count.min(pool.len());
    // partial Fisher–Yates
    for i in 0..k {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_records_satisfy_the_map() {
        let d = generate_dataset(&System::Linear, SubsampleRule::Whole, 10_000, 1).unwrap();
        assert_eq!(d.len(), 10_000);
        for i in 0..d.len() {
            let y = linear::forward(d.v.row(i));
            assert_eq!(d.y.row(i), &y);
            assert!(d.v.row(i).iter().all(|x| (0.0..5.0).contains(x)));
        }
    }

    #[test]
    fn lorenz_counts_and_lag_layout() {
        let sys = LorenzSystem {
            t_final: 0.5,
            ..LorenzSystem::default()
        };
        let rule = SubsampleRule::TimePoints {
            per_sim: 30,
            lags: 10,
        };
        let d = generate_dataset(&System::Lorenz(sys.clone()), rule, 4, 3).unwrap();
        assert_eq!(d.len(), 120);
        assert_eq!(d.aux.cols(), 30);
        let r = 7;
        let v = d.v.row(r);
        let n = (v[3] / sys.dt).round() as usize;
        let traj = sys.trajectory(v[0], v[1], v[2], n).unwrap();
        assert_eq!(d.y.row(r), &traj[n]);
        assert_eq!(&d.aux.row(r)[0..3], &traj[n - 10]);
        assert_eq!(&d.aux.row(r)[27..30], &traj[n - 1]);
    }

    #[test]
    fn rd_counts() {
        let sys = RdSystem {
            grid: 8,
            t_final: 0.1,
            ..RdSystem::default()
        };
        let rule = SubsampleRule::CellsTimes {
            cells: 10,
            times: 5,
            lags: 1,
        };
        let d = generate_dataset(&System::ReactionDiffusion(sys), rule, 3, 5).unwrap();
        assert_eq!(d.len(), 150);
        assert_eq!(d.aux.cols(), 18);
        assert_eq!(d.v.cols(), 6);
    }

    #[test]
    fn same_seed_same_records() {
        let a = generate_dataset(
            &System::Rcr(RcrSystem::default()),
            SubsampleRule::Whole,
            5,
            9,
        )
        .unwrap();
        let b = generate_dataset(
            &System::Rcr(RcrSystem::default()),
            SubsampleRule::Whole,
            5,
            9,
        )
        .unwrap();
        let c = generate_dataset(
            &System::Rcr(RcrSystem::default()),
            SubsampleRule::Whole,
            5,
            10,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.v, c.v);
    }

    #[test]
    fn rule_must_match_system() {
        assert!(generate_dataset(
            &System::Linear,
            SubsampleRule::TimePoints {
                per_sim: 3,
                lags: 1
            },
            2,
            0
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.csv");
        let d = generate_dataset(
            &System::for_experiment(Experiment::Sine),
            SubsampleRule::Whole,
            50,
            2,
        )
        .unwrap();
        d.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, d);
    }
}
