//! Synthetic datasets, CSV ingestion, and checkpoints.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::lstm::{Dims, ModelParams, Sequence};

/// Shape shared by every sequence of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDims {
    pub input: usize,
    pub output: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: DataDims,
    pub sequences: Vec<Sequence>,
}

/// Train / validation / test partition of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(dims: DataDims, sequences: Vec<Sequence>) -> Result<Self> {
        for s in &sequences {
            if s.len() != dims.seq_len {
                return Err(Error::DimensionMismatch { op: "Dataset::new(seq_len)", expected: dims.seq_len, found: s.len() });
            }
            if let Some(x) = s.inputs.iter().find(|x| x.dim() != dims.input) {
                return Err(Error::DimensionMismatch { op: "Dataset::new(input)", expected: dims.input, found: x.dim() });
            }
            if s.target.dim() != dims.output {
                return Err(Error::DimensionMismatch {
                    op: "Dataset::new(output)",
                    expected: dims.output,
                    found: s.target.dim(),
                });
            }
        }
        Ok(Dataset { dims, sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Model dimensions for a given hidden size.
    pub fn model_dims(&self, hidden: usize) -> Dims {
        Dims::new(self.dims.input, hidden, self.dims.output)
    }

    /// Splits off the last `val_frac` and `test_frac` portions, in order train, val, test.
    pub fn split(&self, val_frac: f64, test_frac: f64) -> Result<Splits> {
        if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) || val_frac + test_frac >= 1.0 {
            return Err(Error::InvalidConfig(format!("bad split fractions {val_frac}, {test_frac}")));
        }
        let n = self.len();
        let n_test = (n as f64 * test_frac).round() as usize;
        let n_val = (n as f64 * val_frac).round() as usize;
        let n_train = n.saturating_sub(n_val + n_test);
        let part = |r: std::ops::Range<usize>| Dataset { dims: self.dims, sequences: self.sequences[r].to_vec() };
        Ok(Splits {
            train: part(0..n_train),
            val: part(n_train..n_train + n_val),
            test: part(n_train + n_val..n),
        })
    }
}

/// Maps a value in `[-1, 1]` into `[0.1, 0.9]`.
pub fn rescale_unit(v: f64) -> f64 {
    0.5 + 0.4 * v
}

/// Maps a sum of two `U(0,1)` values in `[0, 2]` into `[0.1, 0.9]`.
pub fn rescale_sum(v: f64) -> f64 {
    0.1 + 0.4 * v
}

/// `x_k = sin(ω k + φ) + noise·ε_k` for `k < len`; the target is the
/// noise-free next value `sin(ω len + φ)` rescaled into `(0.1, 0.9)`.
pub fn sine_sequence<R: Rng + ?Sized>(len: usize, freq: f64, phase: f64, noise: f64, rng: &mut R) -> Sequence {
    let inputs = (0..len)
        .map(|k| {
            let clean = (freq * k as f64 + phase).sin();
            let eps: f64 = if noise > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            Vector::new(vec![clean + noise * eps])
        })
        .collect();
    let target = Vector::new(vec![rescale_unit((freq * len as f64 + phase).sin())]);
    Sequence::new(inputs, target)
}

/// Sines with random phase in `[0, 2π)` and angular frequency in `[0.1, 0.6)` rad/step.
pub fn gen_noisy_sine(n: usize, len: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || len == 0 {
        return Err(Error::InvalidConfig("noisy sine needs n >= 1 and len >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..n)
        .map(|_| {
            let phase = rng.random_range(0.0..2.0 * PI);
            let freq = rng.random_range(0.1..0.6);
            sine_sequence(len, freq, phase, noise, &mut rng)
        })
        .collect();
    Dataset::new(DataDims { input: 1, output: 1, seq_len: len }, sequences)
}

/// Adding problem: channel 0 holds `U(0,1)` values, channel 1 flags exactly
/// two positions; the target is the rescaled sum of the two flagged values.
pub fn gen_adding(n: usize, len: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || len < 2 {
        return Err(Error::InvalidConfig("adding problem needs n >= 1 and len >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
            let first = rng.random_range(0..len);
            let mut second = rng.random_range(0..len - 1);
            if second >= first {
                second += 1;
            }
            adding_sequence(&values, first, second)
        })
        .collect();
    Dataset::new(DataDims { input: 2, output: 1, seq_len: len }, sequences)
}

/// One adding-problem sequence with markers at `first` and `second`.
pub fn adding_sequence(values: &[f64], first: usize, second: usize) -> Sequence {
    let inputs = values
        .iter()
        .enumerate()
        .map(|(k, &v)| Vector::new(vec![v, if k == first || k == second { 1.0 } else { 0.0 }]))
        .collect();
    Sequence::new(inputs, Vector::new(vec![rescale_sum(values[first] + values[second])]))
}

/// Column names: `x{t}_{k}` for each step `t` and feature `k`, then `y_{k}`.
pub fn csv_header(dims: DataDims) -> Vec<String> {
    let mut h = Vec::with_capacity(dims.seq_len * dims.input + dims.output);
    for t in 0..dims.seq_len {
        for k in 0..dims.input {
            h.push(format!("x{t}_{k}"));
        }
    }
    for k in 0..dims.output {
        h.push(format!("y_{k}"));
    }
    h
}

/// Reads one sequence per row; see [`csv_header`] for the layout.
pub fn load_csv(path: &Path, dims: DataDims) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv(BufReader::new(file), dims, path)
}

pub fn read_csv<R: std::io::Read>(reader: R, dims: DataDims, path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line: line as usize, message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let expected = csv_header(dims);
    let mut records = rdr.records();

    let header = records.next().ok_or_else(|| parse_err(1, "missing header row".into()))??;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(parse_err(
            1,
            format!("header does not match layout for X={}, l={}, Y={}", dims.input, dims.seq_len, dims.output),
        ));
    }

    let mut sequences = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(parse_err(line, format!("expected {} columns, found {}", expected.len(), rec.len())));
        }
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column {} ({}): {e}", col + 1, expected[col])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (xs, ys) = values.split_at(dims.seq_len * dims.input);
        let inputs = xs.chunks(dims.input).map(|c| Vector::new(c.to_vec())).collect();
        sequences.push(Sequence::new(inputs, Vector::new(ys.to_vec())));
    }
    Dataset::new(dims, sequences)
}

pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(data.dims))?;
    for s in &data.sequences {
        let row = s.inputs.iter().flat_map(|x| x.iter()).chain(s.target.iter()).map(|v| v.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    write_csv(data, BufWriter::new(File::create(path)?))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model. Floats are written in shortest round-trip decimal form,
/// so `load(save(m)) == m` bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Dims,
    #[serde(rename = "W_ix")]
    pub w_ix: Matrix,
    #[serde(rename = "W_ih")]
    pub w_ih: Matrix,
    #[serde(rename = "W_ox")]
    pub w_ox: Matrix,
    #[serde(rename = "W_oh")]
    pub w_oh: Matrix,
    #[serde(rename = "W_fx")]
    pub w_fx: Matrix,
    #[serde(rename = "W_fh")]
    pub w_fh: Matrix,
    #[serde(rename = "W_cix")]
    pub w_cix: Matrix,
    #[serde(rename = "W_cih")]
    pub w_cih: Matrix,
    pub b_i: Vector,
    pub b_o: Vector,
    pub b_f: Vector,
    pub b_ci: Vector,
    #[serde(rename = "W_hy")]
    pub w_hy: Matrix,
    /// Echo of the training configuration, if any.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: Option<serde_json::Value>, seed: Option<u64>) -> Self {
        let p = params.clone();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: p.dims,
            w_ix: p.w_ix,
            w_ih: p.w_ih,
            w_ox: p.w_ox,
            w_oh: p.w_oh,
            w_fx: p.w_fx,
            w_fh: p.w_fh,
            w_cix: p.w_cix,
            w_cih: p.w_cih,
            b_i: p.b_i,
            b_o: p.b_o,
            b_f: p.b_f,
            b_ci: p.b_ci,
            w_hy: p.w_hy,
            config,
            seed,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let c = self.clone();
        let p = ModelParams {
            dims: c.dims,
            w_ix: c.w_ix,
            w_ih: c.w_ih,
            w_ox: c.w_ox,
            w_oh: c.w_oh,
            w_fx: c.w_fx,
            w_fh: c.w_fh,
            w_cix: c.w_cix,
            w_cih: c.w_cih,
            b_i: c.b_i,
            b_o: c.b_o,
            b_f: c.b_f,
            b_ci: c.b_ci,
            w_hy: c.w_hy,
        };
        p.validate()?;
        if !p.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: probe.version });
        }
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(ckpt.to_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
