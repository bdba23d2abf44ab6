//! Minimizes `MSE + R + λ₁(ρ_h² − 1)₊ + λ₂(β‖W_oh‖ − 1)₊` over mini-batches.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lstm::{forward, loss_and_grad, mse, ModelParams, ParamGrads};
use crate::perturb::{inject_noise, trial_seed};
use crate::tikhonov::{self, penalty_grad, Objective, RegConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    #[default]
    Tikhonov,
    L2,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reg_mode: RegMode,
    pub reg: RegConfig,
    /// L2 coefficient; the added gradient is `weight_decay · θ`.
    pub weight_decay: f64,
    /// Stop after this many epochs without validation improvement; 0 disables.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Wall time breaks bit-reproducible metrics, so it is opt-in.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            reg_mode: RegMode::Tikhonov,
            reg: RegConfig::default(),
            weight_decay: 1e-4,
            patience: 0,
            clip_norm: 5.0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return bad("weight_decay and clip_norm must be >= 0".into());
        }
        self.reg.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub reg: f64,
    pub pen1: f64,
    pub pen2: f64,
    pub rho_h_sq: f64,
    pub beta_norm_oh: f64,
    pub wall_time_s: f64,
    /// `train_mse + reg + pen1 + pen2`
    pub objective: f64,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "epoch", "train_mse", "val_mse", "reg", "pen1", "pen2", "rho_h_sq", "beta_norm_oh", "wall_time_s", "objective",
];

pub fn write_metrics_csv<W: Write>(history: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for m in history {
        w.write_record([
            m.epoch.to_string(),
            m.train_mse.to_string(),
            m.val_mse.to_string(),
            m.reg.to_string(),
            m.pen1.to_string(),
            m.pen2.to_string(),
            m.rho_h_sq.to_string(),
            m.beta_norm_oh.to_string(),
            m.wall_time_s.to_string(),
            m.objective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `θ ← θ − lr · g`
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState { lr, beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    state.step(params, grads);
}

enum Optimizer {
    Sgd(f64),
    Adam(AdamState),
}

impl Optimizer {
    fn new(config: &TrainConfig, n: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd(config.learning_rate),
            OptimizerKind::Adam => {
                Optimizer::Adam(AdamState::new(n, config.learning_rate, config.beta1, config.beta2, config.epsilon))
            }
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &ParamGrads) {
        let mut flat = params.to_flat();
        let g = grads.to_flat();
        match self {
            Optimizer::Sgd(lr) => sgd_step(&mut flat, &g, *lr),
            Optimizer::Adam(state) => state.step(&mut flat, &g),
        }
        params.set_flat(&flat).expect("same layout");
    }
}

/// Rescales `grads` so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}

/// Mean MSE and mean gradient over a batch; the sum runs in batch order.
pub fn batch_loss_and_grad(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<(f64, ParamGrads)> {
    let per_seq = indices
        .par_iter()
        .map(|&i| loss_and_grad(params, &data.sequences[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = ModelParams::zeros(params.dims);
    let mut loss = 0.0;
    for (l, g) in &per_seq {
        loss += l;
        grad.add_scaled(1.0, g);
    }
    let n = indices.len() as f64;
    grad.scale_in_place(1.0 / n);
    Ok((loss / n, grad))
}

/// Mean MSE over a dataset; 0 for an empty one.
pub fn dataset_mse(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let losses = data
        .sequences
        .par_iter()
        .map(|s| forward(params, s).and_then(|(y, _)| mse(&y, &s.target)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Objective parts at `params` for the configured mode.
pub fn objective_parts(params: &ModelParams, batch_mse: f64, config: &TrainConfig) -> Objective {
    match config.reg_mode {
        RegMode::Tikhonov => tikhonov::objective(params, batch_mse, &config.reg),
        RegMode::L2 => {
            let sq = params.global_norm().powi(2);
            Objective::new(batch_mse, 0.5 * config.weight_decay * sq, 0.0, 0.0)
        }
        RegMode::None => Objective::new(batch_mse, 0.0, 0.0, 0.0),
    }
}

/// Gradient of the regularization terms for the configured mode.
pub fn regularization_grad(params: &ModelParams, config: &TrainConfig) -> Option<ParamGrads> {
    match config.reg_mode {
        RegMode::Tikhonov => {
            let r = &config.reg;
            (r.lambda_s != 0.0 || r.lambda_1 != 0.0 || r.lambda_2 != 0.0).then(|| penalty_grad(params, r).grad)
        }
        RegMode::L2 => (config.weight_decay != 0.0).then(|| {
            let mut g = params.clone();
            g.scale_in_place(config.weight_decay);
            g
        }),
        RegMode::None => None,
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// Parameters from the epoch with the lowest validation MSE.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

pub fn train(params0: &ModelParams, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let start = Instant::now();
    let mut params = params0.clone();
    let mut optimizer = Optimizer::new(config, params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grad) = batch_loss_and_grad(&params, train_set, batch)?;
            if let Some(rg) = regularization_grad(&params, config) {
                grad.add_scaled(1.0, &rg);
            }
            if !loss.is_finite() || !grad.is_finite() {
                return Err(non_finite(epoch, &params, config));
            }
            clip_global_norm(&mut grad, config.clip_norm);
            optimizer.apply(&mut params, &grad);
        }

        let train_mse = dataset_mse(&params, train_set)?;
        let val_mse = if val_set.is_empty() { train_mse } else { dataset_mse(&params, val_set)? };
        let parts = objective_parts(&params, train_mse, config);
        if !parts.total.is_finite() || !val_mse.is_finite() {
            return Err(non_finite(epoch, &params, config));
        }
        let coeffs = tikhonov::coefficients(&params, &config.reg);
        history.push(EpochMetrics {
            epoch,
            train_mse,
            val_mse,
            reg: parts.reg,
            pen1: parts.pen1,
            pen2: parts.pen2,
            rho_h_sq: coeffs.rho_h_sq(),
            beta_norm_oh: coeffs.output_gate_gain(),
            wall_time_s: if config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
            objective: parts.total,
        });

        if val_mse < best.0 {
            best = (val_mse, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }

    Ok(TrainResult { params: best.1, best_epoch: best.2, history })
}

fn non_finite(epoch: usize, params: &ModelParams, config: &TrainConfig) -> Error {
    Error::NonFiniteLoss { epoch, coefficients: Box::new(tikhonov::coefficients(params, &config.reg)) }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub sigma_eps: f64,
    pub mean_mse: f64,
}

/// Mean test MSE against clean targets when inputs carry `N(0, σ_ε²)` noise.
///
/// Noise for level `j`, trial `t`, sequence `k` comes from a stream derived
/// from `(seed, t, k)`, so every level sees the same underlying draws scaled
/// by `σ_ε`. The `σ_ε = 0` row is the clean test MSE.
pub fn evaluate_robustness(
    params: &ModelParams,
    test: &Dataset,
    levels: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if levels.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("noise levels must be finite and >= 0".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidConfig("test set is empty".into()));
    }
    let trials = trials.max(1);
    levels
        .iter()
        .map(|&sigma| {
            if sigma == 0.0 {
                return Ok(RobustnessRow { sigma_eps: 0.0, mean_mse: dataset_mse(params, test)? });
            }
            let jobs: Vec<(usize, usize)> =
                (0..trials).flat_map(|t| (0..test.len()).map(move |k| (t, k))).collect();
            let losses = jobs
                .par_iter()
                .map(|&(t, k)| {
                    let s = &test.sequences[k];
                    let noisy = inject_noise(s, sigma, trial_seed(trial_seed(seed, t as u64), k as u64));
                    forward(params, &noisy).and_then(|(y, _)| mse(&y, &s.target))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(RobustnessRow { sigma_eps: sigma, mean_mse: losses.iter().sum::<f64>() / losses.len() as f64 })
        })
        .collect()
}

pub fn write_robustness_csv<W: Write>(rows: &[RobustnessRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_eps", "mean_mse"])?;
    for r in rows {
        w.write_record([r.sigma_eps.to_string(), r.mean_mse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Log grid `1e-4, 1e-3, …, 1` for `λ_S`.
pub const LAMBDA_S_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best_lambda_s: f64,
    /// `(λ_S, validation MSE under noise)` per grid point.
    pub scores: Vec<(f64, f64)>,
    pub best: TrainResult,
}

impl PartialEq for TrainResult {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.best_epoch == other.best_epoch && self.history == other.history
    }
}

/// Trains once per `λ_S` and keeps the one with the lowest validation MSE
/// under input noise `sigma_eps`.
pub fn grid_search_lambda_s(
    params0: &ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    base: &TrainConfig,
    grid: &[f64],
    sigma_eps: f64,
    trials: usize,
) -> Result<GridSearchResult> {
    if grid.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig("grid search needs a nonempty grid and validation set".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, TrainResult)> = None;
    for &lambda_s in grid {
        let mut cfg = base.clone();
        cfg.reg_mode = RegMode::Tikhonov;
        cfg.reg.lambda_s = lambda_s;
        let result = train(params0, train_set, val_set, &cfg)?;
        let score = evaluate_robustness(&result.params, val_set, &[sigma_eps], trials, base.seed)?[0].mean_mse;
        scores.push((lambda_s, score));
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((lambda_s, score, result));
        }
    }
    let (best_lambda_s, _, best) = best.expect("nonempty grid");
    Ok(GridSearchResult { best_lambda_s, scores, best })
}
