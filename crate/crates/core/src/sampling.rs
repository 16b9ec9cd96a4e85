//! Latent sampling strategies used when inverting a fixed output `y*`.
//!
//! * prior: `w ~ N(0, I)`.
//! * predictor-corrector (PC): decode, re-encode the decoded input, keep
//!   only the encoder mean, decode again; repeated `R` times.
//! * high-density (HD): draw from a random subset of per-input posteriors
//!   and keep the samples where their summed density is largest.
//! * NF: fit a flow to encoder-generated latents and sample from it.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::emulator::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowSpec, FlowStack};
use crate::physics::pick_distinct;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vae::{reparam, Decoder, InverseModel, VariationalEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "prior")]
    Prior,
    #[serde(rename = "pc")]
    Pc,
    #[serde(rename = "hd")]
    Hd,
    #[serde(rename = "nf")]
    Nf,
    #[serde(rename = "nf+pc")]
    NfPc,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Prior,
        Strategy::Pc,
        Strategy::Hd,
        Strategy::Nf,
        Strategy::NfPc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Prior => "prior",
            Strategy::Pc => "pc",
            Strategy::Hd => "hd",
            Strategy::Nf => "nf",
            Strategy::NfPc => "nf+pc",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown sampling strategy `{s}` (expected prior, pc, hd, nf or nf+pc)"
                ))
            })
    }
}

/// Parameters that produced a sample set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub q: Option<usize>,
    pub top_n: Option<usize>,
    /// Rows removed because an intermediate value was non-finite.
    #[serde(default)]
    pub dropped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSampleSet {
    samples: Tensor,
    strategy: Strategy,
    provenance: Provenance,
}

impl LatentSampleSet {
    pub fn new(samples: Tensor, strategy: Strategy, provenance: Provenance) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::shape(
                "latent samples",
                "[n, dim(w)]",
                format!("{:?}", samples.shape()),
            ));
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite {
                op: "latent sample set".into(),
                node: None,
            });
        }
        Ok(Self {
            samples,
            strategy,
            provenance,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// CSV with `# key=value` provenance lines ahead of the `w1,…` header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# strategy={}", self.strategy)?;
        let p = &self.provenance;
        for (k, v) in [
            ("seed", p.seed.map(|x| x as usize)),
            ("R", p.r),
            ("S", p.s),
            ("Q", p.q),
            ("top_n", p.top_n),
        ] {
            if let Some(v) = v {
                writeln!(out, "# {k}={v}")?;
            }
        }
        if !p.dropped.is_empty() {
            let list: Vec<String> = p.dropped.iter().map(usize::to_string).collect();
            writeln!(out, "# dropped={}", list.join(";"))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.dim()).map(|k| format!("w{k}")))?;
        for row in self.samples.iter_rows() {
            w.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut strategy = None;
        let mut prov = Provenance::default();
        let mut body = String::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Data(format!("bad provenance line `{line}`")))?;
                let num = |v: &str| {
                    v.parse::<u64>()
                        .map_err(|_| Error::Data(format!("bad provenance value `{line}`")))
                };
                match k {
                    "strategy" => strategy = Some(v.parse()?),
                    "seed" => prov.seed = Some(num(v)?),
                    "R" => prov.r = Some(num(v)? as usize),
                    "S" => prov.s = Some(num(v)? as usize),
                    "Q" => prov.q = Some(num(v)? as usize),
                    "top_n" => prov.top_n = Some(num(v)? as usize),
                    "dropped" => {
                        prov.dropped = v
                            .split(';')
                            .map(|x| num(x).map(|n| n as usize))
                            .collect::<Result<_>>()?
                    }
                    _ => return Err(Error::Data(format!("unknown provenance key `{k}`"))),
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let strategy = strategy
            .ok_or_else(|| Error::Data(format!("{} has no strategy line", path.display())))?;
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let dim = reader.headers()?.len();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad latent value `{x}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(Tensor::from_rows(&rows, dim)?, strategy, prov)
    }
}

/// `n` i.i.d. standard-normal latents.
pub fn sample_prior(dim: usize, n: usize, rng: &mut Rng) -> LatentSampleSet {
    let prov = Provenance {
        seed: Some(rng.seed()),
        ..Provenance::default()
    };
    LatentSampleSet::new(rng.gaussian_matrix(n, dim), Strategy::Prior, prov)
        .expect("gaussian draws are finite")
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    let data: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
    Tensor::matrix(n, row.len(), data).expect("consistent shape")
}

/// Decodes every latent row together with the fixed output `y*`; physical
/// units in and out.
pub fn invert(decoder: &Decoder, y_star: &[f64], w: &LatentSampleSet) -> Result<Tensor> {
    if y_star.len() != decoder.y_stats().dim() || w.dim() != decoder.latent_dim() {
        return Err(Error::shape(
            "invert",
            format!(
                "y*: {}, w: {}",
                decoder.y_stats().dim(),
                decoder.latent_dim()
            ),
            format!("y*: {}, w: {}", y_star.len(), w.dim()),
        ));
    }
    if y_star.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("y* must be finite".into()));
    }
    if w.is_empty() {
        return Ok(Tensor::zeros(&[0, decoder.v_stats().dim()]));
    }
    decoder.decode(&repeat_row(y_star, w.len()), w.samples())
}

#[derive(Clone, Debug)]
pub struct PcResult {
    /// Final decoded inputs, physical units; one row per surviving latent.
    pub v_hat: Tensor,
    /// Final latents (the encoder means of the last corrector step).
    pub latents: LatentSampleSet,
    /// `‖v̂_[r] − v̂_[r−1]‖` in standardized coordinates for `r = 1..=R`,
    /// per surviving row.
    pub displacements: Vec<Vec<f64>>,
}

/// Predictor-corrector refinement of `w0` for the output `y*`.
///
/// `R = 0` is plain decoding. Rows that turn non-finite are dropped and
/// their indices (into `w0`) recorded in the provenance.
pub fn pc_sampling(
    model: &InverseModel,
    y_star: &[f64],
    w0: &LatentSampleSet,
    r: usize,
) -> Result<PcResult> {
    let dec = &model.decoder;
    let enc = &model.encoder;
    if w0.is_empty() {
        return Err(Error::InvalidArgument(
            "predictor-corrector sampling needs at least one latent".into(),
        ));
    }
    invert(dec, y_star, w0)?;
    let y_all = dec.y_stats().standardize(&repeat_row(y_star, w0.len()))?;
    let first: Vec<usize> = (0..w0.len()).collect();
    let mut v_std = dec.decode_standardized(&y_all, w0.samples())?;
    let mut w = w0.samples().clone();
    let mut alive = first.clone();
    let mut displacements = vec![Vec::with_capacity(r); w0.len()];
    let mut dropped = Vec::new();
    for _ in 0..r {
        let (mu, _) = enc.encode_standardized(&v_std)?;
        // every row of y_all is the same, so any `alive.len()` of them will do
        let next = dec.decode_standardized(&y_all.select_rows(&first[..alive.len()]), &mu)?;
        let mut keep = Vec::new();
        for (pos, &row) in alive.iter().enumerate() {
            if next
                .row(pos)
                .iter()
                .chain(mu.row(pos))
                .all(|x| x.is_finite())
            {
                let d = next
                    .row(pos)
                    .iter()
                    .zip(v_std.row(pos))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                displacements[row].push(d);
                keep.push(pos);
            } else {
                dropped.push(row);
            }
        }
        v_std = next.select_rows(&keep);
        w = mu.select_rows(&keep);
        alive = keep.iter().map(|&p| alive[p]).collect();
    }
    let v_hat = dec.v_stats().destandardize(&v_std)?;
    let strategy = if matches!(w0.strategy(), Strategy::Nf | Strategy::NfPc) {
        Strategy::NfPc
    } else {
        Strategy::Pc
    };
    dropped.sort_unstable();
    let prov = Provenance {
        r: Some(r),
        dropped,
        ..w0.provenance().clone()
    };
    Ok(PcResult {
        v_hat,
        latents: LatentSampleSet::new(w, strategy, prov)?,
        displacements: alive
            .iter()
            .map(|&i| std::mem::take(&mut displacements[i]))
            .collect(),
    })
}

/// `log N(w; μ, diag σ²)`.
fn log_normal_pdf(w: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    w.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - c
        })
        .sum()
}

/// High-density latent selection.
///
/// Picks `s` training inputs at random, draws `q` latents from each of
/// their posteriors and returns the `top_n` draws with the largest summed
/// posterior density (unnormalized, ranking only).
pub fn hd_sampling(
    encoder: &VariationalEncoder,
    inputs: &Tensor,
    s: usize,
    q: usize,
    top_n: usize,
    rng: &mut Rng,
) -> Result<LatentSampleSet> {
    if s * q == 0 {
        return Err(Error::InvalidArgument(
            "high-density sampling needs S·Q > 0".into(),
        ));
    }
    if s > inputs.rows() {
        return Err(Error::InvalidArgument(format!(
            "subset size {s} exceeds the {} available inputs",
            inputs.rows()
        )));
    }
    if top_n > s * q {
        return Err(Error::InvalidArgument(format!(
            "top_n = {top_n} exceeds S·Q = {}",
            s * q
        )));
    }
    let seed = rng.seed();
    let subset = pick_distinct(rng, 0, inputs.rows() - 1, s);
    let (mu, sigma) = encoder.encode(&inputs.select_rows(&subset))?;
    let d = encoder.latent_dim();
    let mut draws = Tensor::zeros(&[s * q, d]);
    for i in 0..s {
        for j in 0..q {
            let eps = rng.gaussian_matrix(1, d);
            let w = reparam(
                &Tensor::row_vector(mu.row(i)),
                &Tensor::row_vector(sigma.row(i)),
                &eps,
            )?;
            draws.row_mut(i * q + j).copy_from_slice(w.data());
        }
    }
    let log_density: Vec<f64> = draws
        .iter_rows()
        .map(|w| {
            let terms: Vec<f64> = (0..s)
                .map(|i| log_normal_pdf(w, mu.row(i), sigma.row(i)))
                .collect();
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        })
        .collect();
    let mut order: Vec<usize> = (0..s * q).collect();
    order.sort_by(|&a, &b| log_density[b].total_cmp(&log_density[a]).then(a.cmp(&b)));
    order.truncate(top_n);
    let prov = Provenance {
        seed: Some(seed),
        s: Some(s),
        q: Some(q),
        top_n: Some(top_n),
        ..Provenance::default()
    };
    LatentSampleSet::new(draws.select_rows(&order), Strategy::Hd, prov)
}

/// Trains a flow on one reparametrized latent per input and samples `n`
/// latents from it. A one-dimensional latent space gets one augmentation
/// coordinate.
pub fn nf_latent_sampling(
    encoder: &VariationalEncoder,
    inputs: &Tensor,
    spec: &FlowSpec,
    cfg: &TrainConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<(FlowStack, LatentSampleSet)> {
    let seed = rng.seed();
    let (mu, sigma) = encoder.encode(inputs)?;
    let w = reparam(&mu, &sigma, &rng.gaussian_matrix(mu.rows(), mu.cols()))?;
    let augment = usize::from(w.cols() == 1);
    let flow = train_flow(&w, spec, augment, cfg, rng)?.flow;
    let samples = flow.sample(n, rng)?;
    let prov = Provenance {
        seed: Some(seed),
        s: Some(inputs.rows()),
        ..Provenance::default()
    };
    Ok((flow, LatentSampleSet::new(samples, Strategy::Nf, prov)?))
}
