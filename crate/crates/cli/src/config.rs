use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lstm_tikhonov::data::{gen_adding, gen_noisy_sine, load_csv};
use lstm_tikhonov::{DataDims, Dataset, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Every field has a default; unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Set from `--seed`; the data, initialization and noise
    /// streams are derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Optimizer and regularizer. `train.seed` is replaced by the run seed.
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    pub perturb: PerturbConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            perturb: PerturbConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    NoisySine,
    Adding,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Number of sequences to generate.
    pub n: usize,
    pub seq_len: usize,
    /// Standard deviation of the input noise of the sine task.
    pub noise: f64,
    /// Source file for `kind = "csv"`.
    pub path: Option<PathBuf>,
    /// Feature and target sizes for `kind = "csv"`.
    pub input_dim: usize,
    pub output_dim: usize,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::NoisySine,
            n: 512,
            seq_len: 10,
            noise: 0.05,
            path: None,
            input_dim: 1,
            output_dim: 1,
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 8 }
    }
}

/// Optional `λ_S` grid search before the final run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub enabled: bool,
    pub grid: Vec<f64>,
    /// Noise level of the validation score.
    pub sigma_eps: f64,
    pub trials: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            enabled: false,
            grid: lstm_tikhonov::trainer::LAMBDA_S_GRID.to_vec(),
            sigma_eps: 0.1,
            trials: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub noise_levels: Vec<f64>,
    pub trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { noise_levels: vec![0.0, 0.01, 0.05, 0.1, 0.2], trials: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub sigma_eps: Vec<f64>,
    pub n_trials: usize,
    /// Limits for the random model used when no checkpoint is given.
    pub max_rho_h_sq: f64,
    pub max_gain: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { sigma_eps: vec![1e-3, 1e-2, 1e-1], n_trials: 200, max_rho_h_sq: 0.5, max_gain: 0.9 }
    }
}

impl RunConfig {
    /// Reads an optional TOML file, then applies `key value` overrides with
    /// dotted keys such as `train.reg.lambda_s`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, parse_value(value))?;
        }
        let config: RunConfig =
            toml::Value::Table(table).try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.hidden == 0 {
            bail!("model.hidden must be >= 1");
        }
        if self.data.n == 0 || self.data.seq_len == 0 {
            bail!("data.n and data.seq_len must be >= 1");
        }
        if self.eval.noise_levels.iter().chain(&self.perturb.sigma_eps).any(|&s| !(s >= 0.0 && s.is_finite())) {
            bail!("noise levels must be finite and >= 0");
        }
        self.train.validate()?;
        Ok(())
    }

    /// Training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        let data = match d.kind {
            DataKind::NoisySine => gen_noisy_sine(d.n, d.seq_len, d.noise, self.seed)?,
            DataKind::Adding => gen_adding(d.n, d.seq_len, self.seed)?,
            DataKind::Csv => {
                let path = d.path.as_ref().context("data.path is required for kind = \"csv\"")?;
                let dims = DataDims { input: d.input_dim, output: d.output_dim, seq_len: d.seq_len };
                load_csv(path, dims)?
            }
        };
        Ok(data)
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).with_context(|| format!("bad override key {key:?}"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key:?}: {part:?} is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Turns `--key value` pairs (with `-` or `_` in keys) into `(key, value)`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected --key value, found {flag:?}");
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("missing value for --{key}"))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}
