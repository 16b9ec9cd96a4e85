//! Pipeline stages. Each stage is a function of the config, its seed and
//! the files produced by earlier stages, so reruns are byte-identical.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FlowConfig};
use super::metrics::Summary;
use super::serialize::InVAErtModel;
use super::verify::InterrogationReport;
use crate::emulator::{relative_l2, train_emulator};
use crate::error::{Error, Result};
use crate::flow::train_flow;
use crate::physics::{generate_dataset, Dataset, System};
use crate::rng::Rng;
use crate::sampling::{
    hd_sampling, invert, nf_latent_sampling, pc_sampling, sample_prior, LatentSampleSet,
    Provenance, Strategy,
};
use crate::tensor::Tensor;
use crate::vae::{train_vae_decoder, CollapseDiagnosis};

/// Random substreams, one per stage, all derived from the config seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Emulator = 1,
    Flow = 2,
    Vae = 3,
    Sampling = 4,
    Outputs = 5,
    Evaluation = 6,
}

pub fn stage_rng(seed: u64, stage: Stage) -> Rng {
    Rng::new(seed).substream(stage as u64)
}

/// File names inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn config_json(&self) -> PathBuf {
        self.dir.join("config.json")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.invaert")
    }

    pub fn outputs(&self) -> PathBuf {
        self.dir.join("outputs.csv")
    }

    pub fn latents(&self) -> PathBuf {
        self.dir.join("latents.csv")
    }

    pub fn inversion(&self) -> PathBuf {
        self.dir.join("inversion.csv")
    }

    pub fn verification(&self) -> PathBuf {
        self.dir.join("verification.json")
    }

    pub fn emulator_eval(&self) -> PathBuf {
        self.dir.join("emulator_eval.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_dataset(&cfg.physics, cfg.data.rule, cfg.data.n_sims, cfg.seed)
}

fn check_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    if data.system != cfg.physics || data.rule != cfg.data.rule {
        return Err(Error::Data("the dataset was generated for a different system or subsampling rule than the config describes".into()));
    }
    Ok(())
}

/// Fits the emulator and stores it in `model`.
pub fn train_emulator_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &mut InVAErtModel,
) -> Result<()> {
    check_dataset(cfg, data)?;
    let spec = cfg
        .emulator
        .spec(data.v.cols() + data.layout.len(), data.y.cols());
    let trained = train_emulator(
        data,
        &spec,
        cfg.emulator.mode,
        &cfg.emulator.train,
        &mut stage_rng(cfg.seed, Stage::Emulator),
    )?;
    model.emulator = Some(trained.model);
    model.log.emulator = trained.loss_history;
    model.log.emulator_held_out = trained.held_out_history;
    Ok(())
}

/// Fits the output-density flow on the dataset outputs. One-dimensional
/// outputs get one augmentation coordinate.
pub fn train_flow_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &mut InVAErtModel,
) -> Result<()> {
    check_dataset(cfg, data)?;
    let augment = usize::from(data.y.cols() == 1);
    let trained = train_flow(
        &data.y,
        &cfg.flow.spec(),
        augment,
        &cfg.flow.train,
        &mut stage_rng(cfg.seed, Stage::Flow),
    )?;
    model.flow = Some(trained.flow);
    model.log.flow = trained.loss_history;
    Ok(())
}

/// Fits the encoder and decoder. The physics-consistency term uses the
/// emulator already in `model`.
pub fn train_vae_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &mut InVAErtModel,
) -> Result<CollapseDiagnosis> {
    check_dataset(cfg, data)?;
    let surrogate = if cfg.vae.lambda_r > 0.0 {
        let e = model.emulator.as_ref().ok_or_else(|| {
            Error::Data("lambda_r > 0 needs a trained emulator; run `train emulator` first".into())
        })?;
        Some(e as &dyn crate::emulator::ForwardSurrogate)
    } else {
        None
    };
    let trained = train_vae_decoder(
        data,
        surrogate,
        &cfg.vae.spec(),
        cfg.vae.penalties(),
        &cfg.vae.train,
        &mut stage_rng(cfg.seed, Stage::Vae),
    )?;
    model.inverse = Some(trained.model);
    model.latent_flow = None;
    model.log.vae = trained.history;
    model.log.latent_flow.clear();
    model.log.collapse = Some(trained.collapse.clone());
    Ok(trained.collapse)
}

/// Emulator, output flow and inverse model, in that order.
pub fn train_all(cfg: &ExperimentConfig, data: &Dataset) -> Result<InVAErtModel> {
    let mut model = InVAErtModel::empty(cfg.clone());
    train_emulator_stage(cfg, data, &mut model)?;
    train_flow_stage(cfg, data, &mut model)?;
    train_vae_stage(cfg, data, &mut model)?;
    Ok(model)
}

/// `n` outputs drawn from the trained output flow (physical units).
pub fn sample_outputs(model: &InVAErtModel, n: usize, seed: u64) -> Result<Tensor> {
    model
        .flow()?
        .sample(n, &mut stage_rng(seed, Stage::Outputs))
}

/// One row per joint draw: `y` from the output flow, `w` from the prior,
/// decoded together.
pub fn joint_inversion(model: &InVAErtModel, n: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let inverse = model.inverse()?;
    let y = sample_outputs(model, n, seed)?;
    let w = sample_prior(
        inverse.latent_dim(),
        n,
        &mut stage_rng(seed, Stage::Sampling),
    );
    let v = inverse.decoder.decode(&y, w.samples())?;
    Ok((y, v))
}

/// Everything that selects latents for one inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionRequest {
    pub strategy: Strategy,
    pub n: usize,
    pub r: usize,
    pub s: usize,
    pub q: usize,
    pub top_n: Option<usize>,
    pub y_star: Option<Vec<f64>>,
    pub latent_flow: FlowConfig,
    pub latent_flow_inputs: usize,
    /// Train a new latent flow even if the model already holds one.
    pub retrain_latent_flow: bool,
}

impl InversionRequest {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let s = &cfg.sampling;
        Self {
            strategy: s.strategy,
            n: s.n,
            r: s.r,
            s: s.s,
            q: s.q,
            top_n: s.top_n,
            y_star: s.y_star.clone(),
            latent_flow: s.latent_flow.clone(),
            latent_flow_inputs: s.latent_flow_inputs,
            retrain_latent_flow: false,
        }
    }
}

/// Decoded inputs for one target output.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub y_star: Vec<f64>,
    pub latents: LatentSampleSet,
    /// Physical inputs, one row per latent.
    pub v_hat: Tensor,
}

impl Inversion {
    /// `inversion.csv`: `# y_star=`, `# strategy=` and `# provenance=`
    /// lines, then one row of inputs per sample.
    pub fn write_csv<W: Write>(&self, mut out: W, input_names: &[String]) -> Result<()> {
        let ys: Vec<String> = self.y_star.iter().map(f64::to_string).collect();
        writeln!(out, "# y_star={}", ys.join(";"))?;
        writeln!(out, "# strategy={}", self.latents.strategy())?;
        writeln!(
            out,
            "# provenance={}",
            serde_json::to_string(self.latents.provenance())?
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(input_names)?;
        for row in self.v_hat.iter_rows() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, layout: &Layout, system: &System) -> Result<()> {
        self.write_csv(
            std::io::BufWriter::new(std::fs::File::create(layout.inversion())?),
            &system.input_names(),
        )?;
        self.latents.save_csv(&layout.latents())
    }

    /// Reads `inversion.csv` back as `(y*, strategy, provenance, v̂)`.
    pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Strategy, Provenance, Tensor)> {
        let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
        let file = std::fs::File::open(path).map_err(|e| bad(&e.to_string()))?;
        let (mut y_star, mut strategy, mut prov) = (None, None, None);
        let mut body = String::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| bad("malformed header line"))?;
                match k {
                    "y_star" => {
                        let parsed: std::result::Result<Vec<f64>, _> =
                            v.split(';').map(str::parse).collect();
                        y_star = Some(parsed.map_err(|_| bad("bad y_star"))?);
                    }
                    "strategy" => strategy = Some(v.parse()?),
                    "provenance" => prov = Some(serde_json::from_str(v)?),
                    _ => return Err(bad(&format!("unknown header key `{k}`"))),
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let cols = reader.headers()?.len();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let row: std::result::Result<Vec<f64>, _> = rec?.iter().map(str::parse).collect();
            rows.push(row.map_err(|_| bad("non-numeric input value"))?);
        }
        Ok((
            y_star.ok_or_else(|| bad("missing y_star line"))?,
            strategy.ok_or_else(|| bad("missing strategy line"))?,
            prov.unwrap_or_default(),
            Tensor::from_rows(&rows, cols)?,
        ))
    }
}

/// Draws latents with the requested strategy and decodes them at `y*`.
///
/// Without a configured `y*` one is drawn from the output flow. Strategies
/// `hd`, `nf` and `nf+pc` need the training inputs in `data`; `nf` trains
/// (or reuses) the latent flow stored in `model`.
pub fn invert_stage(
    model: &mut InVAErtModel,
    data: Option<&Dataset>,
    req: &InversionRequest,
    seed: u64,
) -> Result<Inversion> {
    let mut rng = stage_rng(seed, Stage::Sampling);
    let y_star = match &req.y_star {
        Some(y) => y.clone(),
        None => sample_outputs(model, 1, seed)?.row(0).to_vec(),
    };
    let inverse = model.inverse()?.clone();
    let dim = inverse.latent_dim();
    let need_data = || {
        data.ok_or_else(|| {
            Error::Data(format!(
                "strategy `{}` needs the training dataset",
                req.strategy
            ))
        })
    };
    let latents = match req.strategy {
        Strategy::Prior | Strategy::Pc => sample_prior(dim, req.n, &mut rng),
        Strategy::Hd => hd_sampling(
            &inverse.encoder,
            &need_data()?.v,
            req.s,
            req.q,
            req.top_n.unwrap_or(req.n),
            &mut rng,
        )?,
        Strategy::Nf | Strategy::NfPc => {
            let reuse = model
                .latent_flow
                .as_ref()
                .filter(|_| !req.retrain_latent_flow);
            match reuse {
                Some(flow) => {
                    let prov = Provenance {
                        seed: Some(rng.seed()),
                        ..Provenance::default()
                    };
                    LatentSampleSet::new(flow.sample(req.n, &mut rng)?, Strategy::Nf, prov)?
                }
                None => {
                    let data = need_data()?;
                    let inputs =
                        if req.latent_flow_inputs > 0 && req.latent_flow_inputs < data.len() {
                            let mut idx: Vec<usize> = (0..data.len()).collect();
                            rng.shuffle(&mut idx);
                            idx.truncate(req.latent_flow_inputs);
                            data.v.select_rows(&idx)
                        } else {
                            data.v.clone()
                        };
                    let (flow, set) = nf_latent_sampling(
                        &inverse.encoder,
                        &inputs,
                        &req.latent_flow.spec(),
                        &req.latent_flow.train,
                        req.n,
                        &mut rng,
                    )?;
                    model.latent_flow = Some(flow);
                    set
                }
            }
        }
    };
    match req.strategy {
        Strategy::Pc | Strategy::NfPc => {
            let pc = pc_sampling(&inverse, &y_star, &latents, req.r)?;
            Ok(Inversion {
                y_star,
                latents: pc.latents,
                v_hat: pc.v_hat,
            })
        }
        _ => {
            let v_hat = invert(&inverse.decoder, &y_star, &latents)?;
            Ok(Inversion {
                y_star,
                latents,
                v_hat,
            })
        }
    }
}

/// Held-out accuracy of the emulator plus plot-ready tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorEvaluation {
    /// Fresh simulations generated with a different seed.
    pub records: usize,
    /// `‖ŷ − y‖ / ‖y‖` over all held-out one-step predictions.
    pub one_step_relative_error: f64,
    /// Per-record relative error statistics.
    pub per_record: Summary,
    /// Rollout curves (Lorenz only): one entry per trajectory.
    pub rollouts: Vec<RolloutCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutCurve {
    pub params: Vec<f64>,
    pub times: Vec<f64>,
    pub exact: Vec<Vec<f64>>,
    pub emulated: Vec<Vec<f64>>,
    pub relative_error: Vec<f64>,
    pub diverged_at: Option<usize>,
}

/// Scores the emulator on freshly generated records and, for Lorenz,
/// rolls it out against the solver for `rollouts` prior draws.
pub fn eval_emulator(
    cfg: &ExperimentConfig,
    model: &InVAErtModel,
    rollouts: usize,
) -> Result<(EmulatorEvaluation, Tensor, Tensor)> {
    let emulator = model.emulator()?;
    let sims = if cfg.experiment.is_dynamical() {
        (cfg.data.n_sims / 10).max(10)
    } else {
        (cfg.data.n_sims / 5).max(100)
    };
    let held = generate_dataset(&cfg.physics, cfg.data.rule, sims, cfg.seed ^ 0x5eed_0f_e7a1)?;
    let pred = emulator.emulate(&held.v, &held.aux)?;
    let per: Vec<f64> = (0..held.len())
        .map(|i| {
            let num: f64 = pred
                .row(i)
                .iter()
                .zip(held.y.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let den: f64 = held.y.row(i).iter().map(|b| b * b).sum();
            (num / den.max(1e-300)).sqrt()
        })
        .collect();
    let mut curves = Vec::new();
    if let System::Lorenz(sys) = &cfg.physics {
        let lags = emulator.layout().lags;
        let mut rng = stage_rng(cfg.seed, Stage::Evaluation);
        for _ in 0..rollouts {
            let p: Vec<f64> = [sys.pr_range, sys.ra_range, sys.b_range]
                .iter()
                .map(|&(lo, hi)| rng.uniform_in(lo, hi))
                .collect();
            let exact = sys.trajectory(p[0], p[1], p[2], sys.steps())?;
            let seeds: Vec<Vec<f64>> = exact[..lags].iter().map(|s| s.to_vec()).collect();
            let roll = emulator.rollout(&seeds, sys.steps() + 1 - lags, |n| {
                vec![p[0], p[1], p[2], n as f64 * sys.dt]
            })?;
            let n = roll.states.len();
            let rel: Vec<f64> = (0..n)
                .map(|i| {
                    let num: f64 = roll.states[i]
                        .iter()
                        .zip(&exact[i])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    let den: f64 = exact[i].iter().map(|b| b * b).sum();
                    (num / den.max(1e-300)).sqrt()
                })
                .collect();
            curves.push(RolloutCurve {
                params: p,
                times: (0..n).map(|i| i as f64 * sys.dt).collect(),
                exact: exact[..n].iter().map(|s| s.to_vec()).collect(),
                emulated: roll.states,
                relative_error: rel,
                diverged_at: roll.diverged_at,
            });
        }
    }
    let eval = EmulatorEvaluation {
        records: held.len(),
        one_step_relative_error: relative_l2(&pred, &held.y),
        per_record: Summary::of(&per),
        rollouts: curves,
    };
    Ok((eval, held.y, pred))
}

/// Writes `emulator_eval.json`, the parity table and the rollout curves.
pub fn save_emulator_eval(
    layout: &Layout,
    system: &System,
    eval: &EmulatorEvaluation,
    truth: &Tensor,
    pred: &Tensor,
) -> Result<()> {
    std::fs::write(
        layout.emulator_eval(),
        serde_json::to_string_pretty(eval)? + "\n",
    )?;
    let names = system.output_names();
    let mut w = csv::Writer::from_path(layout.dir.join("emulator_parity.csv"))?;
    let header: Vec<String> = names
        .iter()
        .cloned()
        .chain(names.iter().map(|n| format!("{n}_hat")))
        .collect();
    w.write_record(&header)?;
    for i in 0..truth.rows() {
        w.write_record(truth.row(i).iter().chain(pred.row(i)).map(f64::to_string))?;
    }
    w.flush()?;
    if !eval.rollouts.is_empty() {
        let mut w = csv::Writer::from_path(layout.dir.join("emulator_rollout.csv"))?;
        let mut header = vec!["trajectory".to_string(), "t".to_string()];
        header.extend(names.iter().cloned());
        header.extend(names.iter().map(|n| format!("{n}_hat")));
        header.push("relative_error".into());
        w.write_record(&header)?;
        for (k, c) in eval.rollouts.iter().enumerate() {
            for i in 0..c.times.len() {
                let mut rec = vec![k.to_string(), c.times[i].to_string()];
                rec.extend(c.exact[i].iter().chain(&c.emulated[i]).map(f64::to_string));
                rec.push(c.relative_error[i].to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Headline numbers gathered by `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub experiment: String,
    pub seed: u64,
    pub final_losses: FinalLosses,
    pub collapse: Option<CollapseDiagnosis>,
    pub verification: Option<VerificationDigest>,
    pub emulator: Option<EmulatorDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub emulator: Option<f64>,
    pub emulator_held_out: Option<f64>,
    pub flow: Option<f64>,
    pub vae_total: Option<f64>,
    pub vae_kl: Option<f64>,
    pub vae_reconstruction: Option<f64>,
    pub latent_flow: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationDigest {
    pub y_star: Vec<f64>,
    pub strategy: Option<Strategy>,
    pub rows: usize,
    pub failed: usize,
    pub rejected: usize,
    pub within_1pct: f64,
    pub within_5pct: f64,
    pub within_10pct: f64,
    pub zeta: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorDigest {
    pub one_step_relative_error: f64,
    pub records: usize,
}

/// Writes `report/summary.json`, `report/losses.csv` and, when a
/// verification exists, `report/zeta_histogram.csv`.
pub fn write_report(
    layout: &Layout,
    model: &InVAErtModel,
    verification: Option<&InterrogationReport>,
    emulator: Option<&EmulatorEvaluation>,
) -> Result<ReportSummary> {
    let dir = layout.report_dir();
    std::fs::create_dir_all(&dir)?;
    let log = &model.log;
    let summary = ReportSummary {
        experiment: model.experiment.tag().to_string(),
        seed: model.config.seed,
        final_losses: FinalLosses {
            emulator: log.emulator.last().copied(),
            emulator_held_out: log.emulator_held_out.last().copied(),
            flow: log.flow.last().copied(),
            vae_total: log.vae.total.last().copied(),
            vae_kl: log.vae.kl.last().copied(),
            vae_reconstruction: log.vae.reconstruction.last().copied(),
            latent_flow: log.latent_flow.last().copied(),
        },
        collapse: log.collapse.clone(),
        verification: verification.map(|r| VerificationDigest {
            y_star: r.y_star.clone(),
            strategy: r.strategy,
            rows: r.rows.len(),
            failed: r.failed(),
            rejected: r.rejected.len(),
            within_1pct: r.fraction_within(0.01),
            within_5pct: r.fraction_within(0.05),
            within_10pct: r.fraction_within(0.10),
            zeta: r.recompute_summary(),
        }),
        emulator: emulator.map(|e| EmulatorDigest {
            one_step_relative_error: e.one_step_relative_error,
            records: e.records,
        }),
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    let columns: [(&str, &[f64]); 8] = [
        ("emulator", &log.emulator),
        ("emulator_held_out", &log.emulator_held_out),
        ("flow", &log.flow),
        ("vae_total", &log.vae.total),
        ("vae_kl", &log.vae.kl),
        ("vae_reconstruction", &log.vae.reconstruction),
        ("vae_physics", &log.vae.physics),
        ("latent_flow", &log.latent_flow),
    ];
    let epochs = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(dir.join("losses.csv"))?;
    w.write_record(std::iter::once("epoch").chain(columns.iter().map(|(n, _)| *n)))?;
    for e in 0..epochs {
        let rec = std::iter::once(e.to_string()).chain(
            columns
                .iter()
                .map(|(_, c)| c.get(e).map(f64::to_string).unwrap_or_default()),
        );
        w.write_record(rec)?;
    }
    w.flush()?;

    if let Some(r) = verification {
        let zetas = r.zetas();
        let mut w = csv::Writer::from_path(dir.join("zeta_histogram.csv"))?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        let edges = [
            0.0,
            0.005,
            0.01,
            0.02,
            0.05,
            0.1,
            0.2,
            0.5,
            1.0,
            f64::INFINITY,
        ];
        for win in edges.windows(2) {
            let count = zetas.iter().filter(|&&z| z >= win[0] && z < win[1]).count();
            w.write_record([win[0].to_string(), win[1].to_string(), count.to_string()])?;
        }
        w.flush()?;
    }
    Ok(summary)
}
