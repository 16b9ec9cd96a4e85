//! Model files.
//!
//! ```text
//! magic    8 bytes   "INVAERT1"
//! version  u32 LE
//! header   u64 LE length, then UTF-8 JSON
//! blob     u64 LE length in bytes, then f64 LE values
//! checksum 32 bytes  SHA-256 of everything above
//! ```
//!
//! The header is the JSON form of [`InVAErtModel`] with every tensor's
//! `data` array replaced by an offset into the blob, so weights are stored
//! bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::flow::FlowStack;
use crate::physics::Experiment;
use crate::vae::{CollapseDiagnosis, InverseModel, VaeHistory};

pub const MAGIC: &[u8; 8] = b"INVAERT1";
pub const FORMAT_VERSION: u32 = 1;

/// Every trained component of one experiment. Components are filled in
/// stage by stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InVAErtModel {
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub emulator: Option<EmulatorModel>,
    pub flow: Option<FlowStack>,
    pub inverse: Option<InverseModel>,
    pub latent_flow: Option<FlowStack>,
    #[serde(default)]
    pub log: TrainingLog,
}

/// Per-epoch losses of every training stage run so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub emulator: Vec<f64>,
    pub emulator_held_out: Vec<f64>,
    pub flow: Vec<f64>,
    pub latent_flow: Vec<f64>,
    pub vae: VaeHistory,
    pub collapse: Option<CollapseDiagnosis>,
}

impl InVAErtModel {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self {
            experiment: config.experiment,
            config,
            emulator: None,
            flow: None,
            inverse: None,
            latent_flow: None,
            log: TrainingLog::default(),
        }
    }

    pub fn emulator(&self) -> Result<&EmulatorModel> {
        self.emulator.as_ref().ok_or_else(|| missing("emulator"))
    }

    pub fn flow(&self) -> Result<&FlowStack> {
        self.flow.as_ref().ok_or_else(|| missing("output flow"))
    }

    pub fn inverse(&self) -> Result<&InverseModel> {
        self.inverse
            .as_ref()
            .ok_or_else(|| missing("encoder/decoder"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut value = serde_json::to_value(self)?;
        let mut blob = Vec::new();
        extract_tensors(&mut value, &mut blob);
        let header = serde_json::to_vec(&value)?;
        let mut out = Vec::with_capacity(8 + 4 + 16 + header.len() + blob.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(blob.len() as u64 * 8).to_le_bytes());
        for x in &blob {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Decodes a model; `expected` rejects files trained for another
    /// experiment.
    pub fn from_bytes(
        bytes: &[u8],
        expected: Option<Experiment>,
    ) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not an inVAErt model file (bad magic)".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            ));
        }
        let header_len = r.u64()?;
        let header = r.take(header_len)?;
        let blob_len = r.u64()?;
        if blob_len % 8 != 0 {
            return Err("weight blob length is not a multiple of 8".into());
        }
        let blob_bytes = r.take(blob_len)?;
        let body_end = r.pos;
        let checksum = r.take(32)?;
        if r.pos != bytes.len() {
            return Err("trailing bytes after checksum".into());
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != checksum {
            return Err(CHECKSUM.into());
        }
        let blob: Vec<f64> = blob_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut value: Value =
            serde_json::from_slice(header).map_err(|e| format!("header: {e}"))?;
        if let (Some(want), Some(found)) =
            (expected, value.get("experiment").and_then(Value::as_str))
        {
            if found != want.tag() {
                return Err(format!("{MISMATCH}{found}"));
            }
        }
        restore_tensors(&mut value, &blob)?;
        serde_json::from_value(value).map_err(|e| format!("header: {e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<Experiment>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::ModelFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes, expected).map_err(|reason| {
            if reason == CHECKSUM {
                Error::Checksum
            } else if let Some(found) = reason.strip_prefix(MISMATCH) {
                Error::ExperimentMismatch {
                    expected: expected
                        .map(Experiment::tag)
                        .unwrap_or_default()
                        .to_string(),
                    found: found.to_string(),
                }
            } else {
                Error::ModelFormat {
                    path: path.to_path_buf(),
                    reason,
                }
            }
        })
    }

    /// Loads `path` if it exists (it must belong to the same experiment),
    /// otherwise starts an empty model for `config`.
    pub fn load_or_new(path: &Path, config: &ExperimentConfig) -> Result<Self> {
        if path.exists() {
            let mut m = Self::load(path, Some(config.experiment))?;
            m.config = config.clone();
            Ok(m)
        } else {
            Ok(Self::empty(config.clone()))
        }
    }
}

const CHECKSUM: &str = "checksum";
const MISMATCH: &str = "experiment:";

fn missing(what: &str) -> Error {
    Error::Data(format!(
        "the model file has no trained {what}; run the matching `train` stage first"
    ))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: u64) -> std::result::Result<&'a [u8], String> {
        let n = usize::try_from(n).map_err(|_| "length overflow".to_string())?;
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated model file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn is_tensor(map: &Map<String, Value>) -> bool {
    map.len() == 2
        && map.get("shape").is_some_and(Value::is_array)
        && map.get("data").is_some_and(Value::is_array)
}

/// Moves the `data` of every tensor-shaped object into `blob`.
fn extract_tensors(value: &mut Value, blob: &mut Vec<f64>) {
    match value {
        Value::Object(map) if is_tensor(map) => {
            let data = map.remove("data").expect("checked");
            let offset = blob.len();
            let values = data.as_array().expect("checked");
            blob.extend(values.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)));
            map.insert("offset".into(), Value::from(offset as u64));
        }
        Value::Object(map) => map.values_mut().for_each(|v| extract_tensors(v, blob)),
        Value::Array(items) => items.iter_mut().for_each(|v| extract_tensors(v, blob)),
        _ => {}
    }
}

fn restore_tensors(value: &mut Value, blob: &[f64]) -> std::result::Result<(), String> {
    match value {
        Value::Object(map)
            if map.len() == 2 && map.contains_key("shape") && map.contains_key("offset") =>
        {
            let shape: Vec<usize> = serde_json::from_value(map["shape"].clone())
                .map_err(|e| format!("tensor shape: {e}"))?;
            let offset = map["offset"]
                .as_u64()
                .ok_or("tensor offset is not an integer")? as usize;
            let len: usize = shape.iter().product();
            let data = blob
                .get(offset..offset + len)
                .ok_or("tensor extends past the weight blob")?;
            map.remove("offset");
            map.insert(
                "data".into(),
                Value::Array(data.iter().map(|&x| Value::from(x)).collect()),
            );
            Ok(())
        }
        Value::Object(map) => map.values_mut().try_for_each(|v| restore_tensors(v, blob)),
        Value::Array(items) => items.iter_mut().try_for_each(|v| restore_tensors(v, blob)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpShape};
    use crate::normalize::NormalizationStats;
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use crate::vae::{PenaltyConfig, SigmaHead, VaeSpec};

    fn model() -> InVAErtModel {
        let mut rng = Rng::new(3);
        let cfg = ExperimentConfig::default_for(Experiment::Linear);
        let spec = VaeSpec {
            encoder: MlpShape::new(4, 2, Activation::Relu),
            decoder: MlpShape::new(5, 2, Activation::Silu),
            latent_dim: 1,
            sigma_head: SigmaHead::LogVariance,
        };
        let v_stats =
            NormalizationStats::new(vec![2.5; 3], vec![1.0 / 3.0; 3], vec![false; 3]).unwrap();
        let y_stats =
            NormalizationStats::new(vec![0.1, 0.2], vec![0.7, 1.1], vec![false; 2]).unwrap();
        let mut m = InVAErtModel::empty(cfg);
        m.inverse = Some(
            InverseModel::new(
                &spec,
                PenaltyConfig::new(1.0, 40.0, 0.0),
                v_stats,
                y_stats,
                &mut rng,
            )
            .unwrap(),
        );
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = m.to_bytes().unwrap();
        let back = InVAErtModel::from_bytes(&bytes, Some(Experiment::Linear)).unwrap();
        assert_eq!(back, m);
        let y = Tensor::matrix(2, 2, vec![1.0, 2.0, -0.3, 4.0]).unwrap();
        let w = Tensor::matrix(2, 1, vec![0.1, -1.7]).unwrap();
        let a = m.inverse().unwrap().decoder.decode(&y, &w).unwrap();
        let b = back.inverse().unwrap().decoder.decode(&y, &w).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = model().to_bytes().unwrap();
        let mut bad = bytes.clone();
        let i = bytes.len() - 40;
        bad[i] ^= 1;
        assert_eq!(InVAErtModel::from_bytes(&bad, None).unwrap_err(), CHECKSUM);
        assert!(InVAErtModel::from_bytes(&bytes[..bytes.len() - 10], None)
            .unwrap_err()
            .contains("truncated"));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(InVAErtModel::from_bytes(&v2, None)
            .unwrap_err()
            .contains("version"));
    }

    #[test]
    fn other_experiment_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.invaert");
        model().save(&path).unwrap();
        match InVAErtModel::load(&path, Some(Experiment::Lorenz)) {
            Err(Error::ExperimentMismatch { expected, found }) => {
                assert_eq!((expected.as_str(), found.as_str()), ("lorenz", "linear"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            InVAErtModel::load(&dir.path().join("none"), None),
            Err(Error::ModelFormat { .. })
        ));
    }
}
