use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use invaert::harness::pipeline::{self, EmulatorEvaluation, Inversion, InversionRequest, Layout};
use invaert::harness::{
    verify_inversion, ExperimentConfig, FlowConfig, InVAErtModel, InterrogationReport, Oracle,
    Verifier,
};
use invaert::physics::Dataset;
use invaert::sampling::Strategy;
use invaert::{Error, Result};

/// Train inVAErt networks on a parametric physical system and invert them.
#[derive(Parser)]
#[command(name = "invaert", version)]
struct Cli {
    /// Experiment config (TOML). Defaults to `<out>/config.toml` once a
    /// stage has written it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, env = "INVAERT_SEED")]
    seed: Option<u64>,
    /// Directory for every file the pipeline reads and writes.
    #[arg(long, global = true, env = "INVAERT_OUT", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the dataset (CSV plus JSON sidecar).
    GenerateData,
    /// Train one component, or all of them in order.
    Train {
        #[arg(value_enum)]
        component: Component,
    },
    /// Draw outputs from the trained output-density flow.
    SampleOutputs {
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Decode latent samples at a fixed output.
    Invert {
        /// Target output, comma separated.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        ystar: Option<Vec<f64>>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "R")]
        r: Option<usize>,
        #[arg(long = "S")]
        s: Option<usize>,
        #[arg(long = "Q")]
        q: Option<usize>,
        #[arg(long)]
        top_n: Option<usize>,
        /// TOML file with the latent-flow settings; forces retraining.
        #[arg(long)]
        latent_flow_config: Option<PathBuf>,
    },
    /// Re-simulate the decoded inputs and score them with ζ.
    Verify {
        #[arg(long)]
        oracle: Option<Oracle>,
        #[arg(long)]
        reject_above: Option<f64>,
    },
    /// Held-out emulator error, parity table and rollout curves.
    EvalEmulator {
        #[arg(long, default_value_t = 3)]
        rollouts: usize,
    },
    /// Summaries and plot-ready tables under `<out>/report`.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Component {
    Emulator,
    Flow,
    Vae,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli, layout: &Layout) -> Result<ExperimentConfig> {
    let path = match &cli.config {
        Some(p) => p.clone(),
        None if layout.config().exists() => layout.config(),
        None => {
            return Err(Error::Config(
                "no --config given and no config.toml in the output directory".into(),
            ))
        }
    };
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn save_config(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    cfg.save(&layout.config())?;
    std::fs::write(layout.config_json(), cfg.to_json()? + "\n")?;
    Ok(())
}

fn load_dataset(layout: &Layout) -> Result<Dataset> {
    let path = layout.dataset();
    if !path.exists() {
        return Err(Error::Data(format!(
            "{} not found; run `generate-data` first",
            path.display()
        )));
    }
    Dataset::load(&path)
}

fn load_model(layout: &Layout, cfg: &ExperimentConfig) -> Result<InVAErtModel> {
    InVAErtModel::load(&layout.model(), Some(cfg.experiment))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

fn run(cli: Cli) -> Result<()> {
    let layout = Layout::new(&cli.out);
    let cfg = load_config(&cli, &layout)?;
    std::fs::create_dir_all(&layout.dir)?;
    save_config(&cfg, &layout)?;
    match cli.command {
        Command::GenerateData => {
            let data = pipeline::generate(&cfg)?;
            data.save(&layout.dataset())?;
            println!(
                "{}: {} records -> {}",
                cfg.experiment,
                data.len(),
                layout.dataset().display()
            );
        }
        Command::Train { component } => {
            let data = load_dataset(&layout)?;
            let mut model = InVAErtModel::load_or_new(&layout.model(), &cfg)?;
            let (emu, flow, vae) = match component {
                Component::Emulator => (true, false, false),
                Component::Flow => (false, true, false),
                Component::Vae => (false, false, true),
                Component::All => (true, true, true),
            };
            if emu {
                pipeline::train_emulator_stage(&cfg, &data, &mut model)?;
                println!(
                    "emulator: final loss {:.4e}",
                    model.log.emulator.last().copied().unwrap_or(f64::NAN)
                );
            }
            if flow {
                pipeline::train_flow_stage(&cfg, &data, &mut model)?;
                println!(
                    "flow: final NLL {:.4}",
                    model.log.flow.last().copied().unwrap_or(f64::NAN)
                );
            }
            if vae {
                let collapse = pipeline::train_vae_stage(&cfg, &data, &mut model)?;
                println!(
                    "vae: final loss {:.4e}",
                    model.log.vae.total.last().copied().unwrap_or(f64::NAN)
                );
                if let invaert::vae::CollapseDiagnosis::Collapsed { advisory, .. } = &collapse {
                    eprintln!("warning: {advisory}");
                }
            }
            model.save(&layout.model())?;
        }
        Command::SampleOutputs { n } => {
            let model = load_model(&layout, &cfg)?;
            let y = pipeline::sample_outputs(&model, n, cfg.seed)?;
            let mut w = csv::Writer::from_path(layout.outputs())?;
            w.write_record(cfg.physics.output_names())?;
            for row in y.iter_rows() {
                w.write_record(row.iter().map(f64::to_string))?;
            }
            w.flush()?;
            println!("{n} outputs -> {}", layout.outputs().display());
        }
        Command::Invert {
            ystar,
            strategy,
            n,
            r,
            s,
            q,
            top_n,
            latent_flow_config,
        } => {
            let mut model = load_model(&layout, &cfg)?;
            let mut req = InversionRequest::from_config(&cfg);
            req.y_star = ystar.or(req.y_star);
            req.strategy = strategy.unwrap_or(req.strategy);
            req.n = n.unwrap_or(req.n);
            req.r = r.unwrap_or(req.r);
            req.s = s.unwrap_or(req.s);
            req.q = q.unwrap_or(req.q);
            req.top_n = top_n.or(req.top_n);
            if let Some(path) = latent_flow_config {
                req.latent_flow = FlowConfig::load(&path)?;
                req.retrain_latent_flow = true;
            }
            let data = match req.strategy {
                Strategy::Hd | Strategy::Nf | Strategy::NfPc => Some(load_dataset(&layout)?),
                Strategy::Prior | Strategy::Pc => None,
            };
            let had_flow = model.latent_flow.is_some();
            let inv = pipeline::invert_stage(&mut model, data.as_ref(), &req, cfg.seed)?;
            inv.save(&layout, &cfg.physics)?;
            if model.latent_flow.is_some() && (!had_flow || req.retrain_latent_flow) {
                model.save(&layout.model())?;
            }
            println!(
                "{} samples ({}) -> {}",
                inv.v_hat.rows(),
                req.strategy,
                layout.inversion().display()
            );
        }
        Command::Verify {
            oracle,
            reject_above,
        } => {
            let (y_star, strategy, prov, v_hat) = Inversion::read_csv(&layout.inversion())?;
            let oracle = oracle.unwrap_or(cfg.verify.oracle);
            let reject = reject_above.or(cfg.verify.reject_above);
            let model;
            let verifier = match oracle {
                Oracle::Exact => Verifier::Exact(&cfg.physics),
                Oracle::Emulator => {
                    model = load_model(&layout, &cfg)?;
                    Verifier::Emulator(&cfg.physics, model.emulator()?)
                }
            };
            let report = verify_inversion(
                &verifier,
                &v_hat,
                &y_star,
                reject,
                Some(strategy),
                Some(prov),
            )?;
            report.save(&layout.dir, &cfg.physics)?;
            let s = &report.summary;
            println!(
                "{} rows verified ({} failed, {} rejected); median ζ = {}",
                report.rows.len(),
                report.failed(),
                report.rejected.len(),
                s.median.map_or("n/a".to_string(), |m| format!("{m:.4e}"))
            );
        }
        Command::EvalEmulator { rollouts } => {
            let model = load_model(&layout, &cfg)?;
            let (eval, truth, pred) = pipeline::eval_emulator(&cfg, &model, rollouts)?;
            pipeline::save_emulator_eval(&layout, &cfg.physics, &eval, &truth, &pred)?;
            println!(
                "emulator one-step relative error {:.4e} over {} records",
                eval.one_step_relative_error, eval.records
            );
        }
        Command::Report => {
            let model = load_model(&layout, &cfg)?;
            let verification: Option<InterrogationReport> = read_json(&layout.verification())?;
            let emulator: Option<EmulatorEvaluation> = read_json(&layout.emulator_eval())?;
            pipeline::write_report(&layout, &model, verification.as_ref(), emulator.as_ref())?;
            println!("report -> {}", layout.report_dir().display());
        }
    }
    Ok(())
}
