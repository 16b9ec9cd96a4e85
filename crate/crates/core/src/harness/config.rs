//! Experiment configuration.
//!
//! A config file is TOML with one table per component. Only the keys that
//! differ from the experiment defaults need to be written:
//!
//! ```toml
//! experiment = "sine"
//! seed = 11
//!
//! [vae]
//! lambda_d = 150.0
//!
//! [vae.train]
//! epochs = 800
//! ```
//!
//! Defaults follow the published hyperparameter tables, except for
//! `lorenz` and `rd`, whose networks and epoch counts are cut down to fit a
//! single core.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emulator::{EmulatorMode, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::FlowSpec;
use crate::nn::{Activation, DenseNetSpec, MlpShape};
use crate::physics::rd::RdSystem;
use crate::physics::{Experiment, SubsampleRule, System};
use crate::sampling::Strategy;
use crate::vae::{PenaltyConfig, SigmaHead, VaeSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub physics: System,
    pub data: DataConfig,
    pub emulator: EmulatorConfig,
    pub flow: FlowConfig,
    pub vae: VaeConfig,
    pub sampling: SamplingConfig,
    pub verify: VerifyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_sims: usize,
    pub rule: SubsampleRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub mode: EmulatorMode,
    pub train: TrainConfig,
}

impl EmulatorConfig {
    pub fn shape(&self) -> MlpShape {
        MlpShape::new(self.width, self.hidden_layers, self.activation)
    }

    pub fn spec(&self, input_dim: usize, output_dim: usize) -> DenseNetSpec {
        self.shape().spec(input_dim, output_dim)
    }
}

/// Real-NVP settings shared by the output-density flow and the latent flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub couplings: usize,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "relu")]
    pub activation: Activation,
    pub train: TrainConfig,
}

fn relu() -> Activation {
    Activation::Relu
}

impl FlowConfig {
    fn new(width: usize, hidden_layers: usize, couplings: usize, train: TrainConfig) -> Self {
        Self {
            width,
            hidden_layers,
            couplings,
            batch_norm: false,
            activation: Activation::Relu,
            train,
        }
    }

    pub fn spec(&self) -> FlowSpec {
        FlowSpec {
            width: self.width,
            hidden_layers: self.hidden_layers,
            couplings: self.couplings,
            batch_norm: self.batch_norm,
            activation: self.activation,
        }
    }

    /// Reads a stand-alone flow config (the `--latent-flow-config` file).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub encoder: MlpShape,
    pub decoder: MlpShape,
    pub latent_dim: usize,
    #[serde(default)]
    pub sigma_head: SigmaHead,
    pub lambda_v: f64,
    pub lambda_d: f64,
    #[serde(default)]
    pub lambda_r: f64,
    pub train: TrainConfig,
}

impl VaeConfig {
    pub fn spec(&self) -> VaeSpec {
        VaeSpec {
            encoder: self.encoder,
            decoder: self.decoder,
            latent_dim: self.latent_dim,
            sigma_head: self.sigma_head,
        }
    }

    pub fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig::new(self.lambda_v, self.lambda_d, self.lambda_r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    /// Number of latent draws.
    pub n: usize,
    /// Predictor-corrector iterations.
    pub r: usize,
    /// High-density subset size and draws per subset member.
    pub s: usize,
    pub q: usize,
    /// High-density draws kept; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    /// Fixed output to invert. When absent, `invert` draws one from the
    /// trained output flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_star: Option<Vec<f64>>,
    /// Latent flow used by `nf` and `nf+pc`.
    pub latent_flow: FlowConfig,
    /// Inputs encoded to train the latent flow; `0` means all records.
    #[serde(default)]
    pub latent_flow_inputs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    Exact,
    Emulator,
}

impl std::str::FromStr for Oracle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Oracle::Exact),
            "emulator" => Ok(Oracle::Emulator),
            other => Err(Error::Config(format!(
                "unknown oracle `{other}` (expected exact or emulator)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub oracle: Oracle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_above: Option<f64>,
}

fn tc(epochs: usize, batch: usize, lr: f64, gamma: f64, wd: f64) -> TrainConfig {
    TrainConfig::new(epochs, batch, lr, gamma, wd)
}

fn mlp(width: usize, hidden: usize, act: Activation) -> MlpShape {
    MlpShape::new(width, hidden, act)
}

impl ExperimentConfig {
    /// Published hyperparameters for `experiment`, at desk scale.
    pub fn default_for(experiment: Experiment) -> Self {
        use Activation::{Identity, Relu, Silu};
        let physics = System::for_experiment(experiment);
        let emulator = |w, h, act, mode, train| EmulatorConfig {
            width: w,
            hidden_layers: h,
            activation: act,
            mode,
            train,
        };
        let sampling = |strategy, n, r, y_star: Option<Vec<f64>>, latent_flow| SamplingConfig {
            strategy,
            n,
            r,
            s: 200,
            q: 5,
            top_n: None,
            y_star,
            latent_flow,
            latent_flow_inputs: 0,
        };
        let default_latent_flow = || FlowConfig::new(10, 4, 6, tc(500, 1024, 5e-3, 0.995, 0.0));
        let exact = VerifyConfig {
            oracle: Oracle::Exact,
            reject_above: None,
        };
        let whole = |n| DataConfig {
            n_sims: n,
            rule: SubsampleRule::Whole,
        };
        match experiment {
            Experiment::Linear => Self {
                experiment,
                seed: 0,
                physics,
                data: whole(10_000),
                emulator: emulator(
                    3,
                    2,
                    Identity,
                    EmulatorMode::Direct,
                    tc(500, 128, 1e-2, 0.98, 0.0),
                ),
                flow: FlowConfig::new(6, 4, 4, tc(500, 128, 1e-2, 0.98, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(8, 4, Relu),
                    decoder: mlp(10, 10, Silu),
                    latent_dim: 1,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 40.0,
                    lambda_r: 0.0,
                    train: tc(500, 64, 1e-2, 0.999, 1e-3),
                },
                sampling: sampling(
                    Strategy::Prior,
                    500,
                    0,
                    Some(vec![14.65, 14.65]),
                    default_latent_flow(),
                ),
                verify: exact,
            },
            Experiment::Sine => Self {
                experiment,
                seed: 0,
                physics,
                data: whole(10_000),
                emulator: emulator(
                    10,
                    4,
                    Relu,
                    EmulatorMode::Direct,
                    tc(2000, 128, 1e-2, 0.99, 0.0),
                ),
                flow: FlowConfig::new(10, 4, 4, tc(2000, 128, 1e-2, 0.99, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(10, 4, Relu),
                    decoder: mlp(10, 10, Silu),
                    latent_dim: 1,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 200.0,
                    lambda_r: 0.0,
                    train: tc(2000, 128, 1e-2, 0.998, 1e-3),
                },
                sampling: sampling(
                    Strategy::Prior,
                    50,
                    0,
                    Some(vec![0.5]),
                    default_latent_flow(),
                ),
                verify: exact,
            },
            Experiment::SinePeriodic => Self {
                experiment,
                seed: 0,
                physics,
                data: whole(10_000),
                emulator: emulator(
                    16,
                    8,
                    Silu,
                    EmulatorMode::Direct,
                    tc(2000, 64, 1e-3, 0.998, 0.0),
                ),
                flow: FlowConfig::new(10, 4, 4, tc(2000, 64, 1e-3, 0.998, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(24, 8, Silu),
                    decoder: mlp(48, 8, Silu),
                    latent_dim: 8,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 200.0,
                    lambda_r: 5.0,
                    train: tc(2000, 32, 1e-3, 0.999, 0.0),
                },
                sampling: sampling(
                    Strategy::Pc,
                    400,
                    2,
                    Some(vec![0.676]),
                    FlowConfig::new(10, 4, 6, tc(500, 1024, 5e-3, 0.995, 0.0)),
                ),
                verify: exact,
            },
            Experiment::Rcr => Self {
                experiment,
                seed: 0,
                physics,
                data: whole(10_000),
                emulator: emulator(
                    10,
                    6,
                    Relu,
                    EmulatorMode::Direct,
                    tc(1000, 128, 1e-2, 0.995, 0.0),
                ),
                flow: FlowConfig::new(10, 4, 6, tc(1000, 128, 1e-2, 0.995, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(10, 4, Relu),
                    decoder: mlp(10, 10, Silu),
                    latent_dim: 1,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 400.0,
                    lambda_r: 0.0,
                    train: tc(1000, 128, 1e-2, 0.9992, 1e-3),
                },
                sampling: sampling(Strategy::Prior, 50, 0, None, default_latent_flow()),
                verify: exact,
            },
            Experiment::Lorenz => Self {
                experiment,
                seed: 0,
                physics,
                data: DataConfig {
                    n_sims: 1000,
                    rule: SubsampleRule::TimePoints {
                        per_sim: 30,
                        lags: 10,
                    },
                },
                emulator: emulator(
                    64,
                    6,
                    Silu,
                    EmulatorMode::Residual,
                    tc(200, 512, 1e-3, 0.99, 0.0),
                ),
                flow: FlowConfig::new(12, 4, 8, tc(100, 512, 1e-3, 0.98, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(24, 8, Silu),
                    decoder: mlp(64, 8, Silu),
                    latent_dim: 6,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 200.0,
                    lambda_r: 7.0,
                    train: tc(500, 128, 1e-3, 0.995, 0.0),
                },
                sampling: sampling(
                    Strategy::Pc,
                    100,
                    10,
                    Some(vec![-3.4723, -8.9758, 26.2026]),
                    FlowConfig::new(8, 4, 6, tc(500, 2048, 5e-3, 0.995, 0.0)),
                ),
                verify: exact,
            },
            Experiment::ReactionDiffusion => Self {
                experiment,
                seed: 0,
                physics: System::ReactionDiffusion(RdSystem {
                    grid: 16,
                    ..RdSystem::default()
                }),
                data: DataConfig {
                    n_sims: 500,
                    rule: SubsampleRule::CellsTimes {
                        cells: 10,
                        times: 5,
                        lags: 1,
                    },
                },
                emulator: emulator(
                    64,
                    6,
                    Silu,
                    EmulatorMode::Residual,
                    tc(150, 256, 1e-3, 0.98, 0.0),
                ),
                flow: FlowConfig::new(12, 4, 8, tc(100, 512, 1e-3, 0.98, 0.0)),
                vae: VaeConfig {
                    encoder: mlp(16, 8, Silu),
                    decoder: mlp(64, 8, Silu),
                    latent_dim: 8,
                    sigma_head: SigmaHead::LogVariance,
                    lambda_v: 1.0,
                    lambda_d: 200.0,
                    lambda_r: 5.0,
                    train: tc(400, 128, 1e-3, 0.995, 0.0),
                },
                sampling: sampling(
                    Strategy::Pc,
                    100,
                    10,
                    Some(vec![-0.6616, -0.5964]),
                    FlowConfig::new(10, 4, 6, tc(500, 2048, 1e-2, 0.995, 0.0)),
                ),
                verify: exact,
            },
        }
    }

    /// Parses a config file, filling every missing key from the defaults
    /// of the experiment it names.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let tag = user
            .get("experiment")
            .and_then(toml::Value::as_str)
            .ok_or_else(|| Error::Config("config must name its `experiment`".into()))?;
        let experiment: Experiment = tag.parse()?;
        let mut merged = toml::Table::try_from(Self::default_for(experiment))
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(user_physics) = user.get("physics").and_then(toml::Value::as_table) {
            // a different physics variant replaces the defaults wholesale
            let tag_of = |t: &toml::Table| t.get("system").cloned();
            let default_tag = merged
                .get("physics")
                .and_then(toml::Value::as_table)
                .and_then(tag_of);
            if user_physics.contains_key("system") && tag_of(user_physics) != default_tag {
                merged.remove("physics");
            }
        }
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The complete config as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// [`Self::to_toml`] preceded by a comment block noting which values
    /// are local choices rather than published settings.
    pub fn annotated_toml(&self) -> Result<String> {
        let mut out = String::from(
            "# Full configuration. Keys missing from the user file come from the\n\
             # experiment defaults. The lorenz and rd defaults use smaller networks\n\
             # and fewer epochs than the published tables so they train on one core.\n\n",
        );
        out.push_str(&self.to_toml()?);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.annotated_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.physics.experiment() != self.experiment {
            return Err(Error::Config(format!(
                "experiment `{}` does not match physics system `{}`",
                self.experiment,
                self.physics.experiment()
            )));
        }
        self.physics.layout(&self.data.rule)?;
        if self.data.n_sims == 0 {
            return Err(Error::Config("data.n_sims must be positive".into()));
        }
        for train in [
            &self.emulator.train,
            &self.flow.train,
            &self.vae.train,
            &self.sampling.latent_flow.train,
        ] {
            train.validate()?;
        }
        if self.emulator.mode == EmulatorMode::Residual && !self.experiment.is_dynamical() {
            return Err(Error::Config(
                "residual emulators need a time-stepping system".into(),
            ));
        }
        if self.flow.couplings < 2 || self.sampling.latent_flow.couplings < 2 {
            return Err(Error::Config(
                "flows need at least two coupling layers".into(),
            ));
        }
        if self.vae.latent_dim == 0 {
            return Err(Error::Config("vae.latent_dim must be at least 1".into()));
        }
        self.vae.penalties().validate()?;
        if let Some(y) = &self.sampling.y_star {
            if y.len() != self.physics.state_dim() {
                return Err(Error::Config(format!(
                    "sampling.y_star needs {} components",
                    self.physics.state_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`: tables merge key by key, any
/// other value replaces what was there.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::default_for(e);
            cfg.validate().unwrap();
            let text = cfg.annotated_toml().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{e}");
            let json: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(json, cfg);
        }
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"sine\"\nseed = 9\n# comment\n[vae]\nlambda_d = 150.0\n[vae.train]\nepochs = 12\n",
        )
        .unwrap();
        let mut expected = ExperimentConfig::default_for(Experiment::Sine);
        expected.seed = 9;
        expected.vae.lambda_d = 150.0;
        expected.vae.train.epochs = 12;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn awkward_floats_survive() {
        let mut cfg = ExperimentConfig::default_for(Experiment::Linear);
        cfg.vae.train.lr = 0.1 + 0.2;
        cfg.sampling.y_star = Some(vec![1.0 / 3.0, -2.5e-300]);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn malformed_configs_are_config_errors() {
        for text in [
            "seed = 1",
            "experiment = \"heat\"",
            "experiment = \"linear\"\n[vae]\nlamda_v = 2.0",
            "experiment = \"linear\"\n[sampling]\ny_star = [1.0]",
            "experiment = \"linear\"\n[physics]\nsystem = \"lorenz\"",
            "experiment = \"linear\" oops",
        ] {
            let err = ExperimentConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn physics_can_be_tuned() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"rd\"\n[physics]\ngrid = 8\nt_final = 1.0\n",
        )
        .unwrap();
        match cfg.physics {
            System::ReactionDiffusion(rd) => assert_eq!(
                (rd.grid, rd.t_final, rd.dt),
                (8, 1.0, RdSystem::default().dt)
            ),
            other => panic!("{other:?}"),
        }
    }
}
