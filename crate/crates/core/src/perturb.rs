//! Noise-injection checks of the perturbation bounds.
//!
//! Three per-step inequalities are theorems and are asserted exactly:
//! the Hadamard-difference bound for `tanh(a)⊙σ(b)`, the sigmoid output
//! layer bound with `α² = 1/16`, and the one-step hidden state bound. The
//! full recurrent bound `σ_y² ≤ ‖W_hy‖² ρ_x²/(1 − ρ_h²) σ_x²` rests on
//! continuous-time arguments, so it is measured by Monte Carlo instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, hadamard, matvec, sigmoid, Matrix, Vector};
use crate::lstm::{forward, Dims, ModelParams, Sequence, StepCache};
use crate::tikhonov::{self, ConstraintViolated, RegCoefficients, RegConfig, ALPHA, BETA};

/// Absolute slack allowed on every theorem check.
pub const CHECK_SLACK: f64 = 1e-12;

/// Power iteration settings for norms that appear on the right-hand side of
/// a theorem check, where an underestimate would show up as a false violation.
const TIGHT_POWER: linalg::PowerIteration = linalg::PowerIteration { max_iters: 10_000, tol: 1e-15 };

/// Adds independent `N(0, σ_ε²)` noise to every input component.
pub fn inject_noise(seq: &Sequence, sigma_eps: f64, seed: u64) -> Sequence {
    if sigma_eps == 0.0 {
        return seq.clone();
    }
    let normal = Normal::new(0.0, sigma_eps).expect("sigma_eps must be finite and >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = seq
        .inputs
        .iter()
        .map(|x| x.map(|xi| xi + normal.sample(&mut rng)))
        .collect();
    Sequence { inputs, target: seq.target.clone() }
}

/// Per-trial seed derived from a base seed (SplitMix64 finalizer).
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed.wrapping_add(trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl InvariantCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        InvariantCheck { lhs, rhs, ok: lhs <= rhs + CHECK_SLACK }
    }
}

/// `‖tanh(â)⊙σ(b̂) − tanh(a)⊙σ(b)‖² ≤ (17/16)(‖â − a‖² + ‖b̂ − b‖²)`
pub fn check_hadamard_invariant(a: &Vector, b: &Vector, a_hat: &Vector, b_hat: &Vector) -> Result<InvariantCheck> {
    let clean = hadamard(&a.map(f64::tanh), &b.map(sigmoid))?;
    let noisy = hadamard(&a_hat.map(f64::tanh), &b_hat.map(sigmoid))?;
    let lhs = noisy.dist_sq(&clean)?;
    let rhs = BETA * (a_hat.dist_sq(a)? + b_hat.dist_sq(b)?);
    Ok(InvariantCheck::new(lhs, rhs))
}

/// `‖σ(W_hy ĥ) − σ(W_hy h)‖² ≤ α² ‖W_hy‖² ‖ĥ − h‖²` with the spectral norm.
pub fn check_output_layer_invariant(w_hy: &Matrix, h: &Vector, h_hat: &Vector) -> Result<InvariantCheck> {
    let y = matvec(w_hy, h)?.map(sigmoid);
    let y_hat = matvec(w_hy, h_hat)?.map(sigmoid);
    let lhs = y_hat.dist_sq(&y)?;
    let norm = linalg::spectral_norm(w_hy, TIGHT_POWER.max_iters, TIGHT_POWER.tol).value;
    let rhs = ALPHA * ALPHA * norm * norm * h_hat.dist_sq(h)?;
    Ok(InvariantCheck::new(lhs, rhs))
}

/// One-step hidden state bound `σ_h² ≤ c (σ_s² + σ_net_o²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HStepCheck {
    pub lhs: f64,
    /// With `c = 17/16`; this is the one asserted.
    pub rhs: f64,
    /// With `c = β²`, looser.
    pub rhs_beta_sq: f64,
    pub ok: bool,
}

pub fn check_h_step_invariant(clean: &StepCache, noisy: &StepCache) -> Result<HStepCheck> {
    let lhs = noisy.h.dist_sq(&clean.h)?;
    let spread = noisy.s.dist_sq(&clean.s)? + noisy.net_o.dist_sq(&clean.net_o)?;
    let rhs = BETA * spread;
    Ok(HStepCheck { lhs, rhs, rhs_beta_sq: BETA * BETA * spread, ok: lhs <= rhs + CHECK_SLACK })
}

/// Theoretical output perturbation bound for a realized `σ_x²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBound {
    /// `‖W_hy‖² ρ_x²/(1 − ρ_h²) σ_x²`
    pub loose: f64,
    /// `α² · loose`, consistent with the sigmoid-head bound.
    pub tight: f64,
}

pub fn theoretical_bound_from_coeffs(c: &RegCoefficients, sigma_x_sq: f64) -> Result<TheoreticalBound, ConstraintViolated> {
    let factor = c.bound_factor().ok_or(ConstraintViolated { rho_h_sq: c.rho_h_sq() })?;
    let loose = c.norm_hy * c.norm_hy * factor * sigma_x_sq;
    Ok(TheoreticalBound { loose, tight: ALPHA * ALPHA * loose })
}

pub fn theoretical_bound(
    params: &ModelParams,
    config: &RegConfig,
    sigma_x_sq: f64,
) -> Result<TheoreticalBound, ConstraintViolated> {
    theoretical_bound_from_coeffs(&tikhonov::coefficients(params, config), sigma_x_sq)
}

/// Random parameters inside the feasible region.
///
/// Draws a uniform model, rescales `W_oh` so that `β‖W_oh‖` equals a random
/// value in `(0, max_gain]`, then rescales `W_fh`, `W_ih`, `W_cih` together so
/// that `ρ_h²` equals a random value in `(0, max_rho_h_sq]`.
pub fn random_feasible_params<R: Rng + ?Sized>(
    dims: Dims,
    max_rho_h_sq: f64,
    max_gain: f64,
    rng: &mut R,
) -> ModelParams {
    let mut p = ModelParams::init_uniform(dims, rng);
    for b in [&mut p.b_i, &mut p.b_o, &mut p.b_f, &mut p.b_ci] {
        for x in b.as_mut_slice() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
    let exact = RegConfig { power: TIGHT_POWER, ..RegConfig::default() };

    let n_oh = linalg::spectral_norm(&p.w_oh, TIGHT_POWER.max_iters, TIGHT_POWER.tol).value;
    if n_oh > 0.0 {
        let gain = rng.random_range(0.05..=1.0) * max_gain;
        p.w_oh.scale_in_place(gain / (BETA * n_oh));
    }

    // ρ_h is linear in γ̄_h, which is linear in a common scale of W_fh, W_ih, W_cih.
    let rho_h = tikhonov::coefficients(&p, &exact).rho_h;
    if rho_h > 0.0 {
        let target = (rng.random_range(0.05..=1.0) * max_rho_h_sq).sqrt();
        let c = target / rho_h;
        for m in [&mut p.w_fh, &mut p.w_ih, &mut p.w_cih] {
            m.scale_in_place(c);
        }
    }
    p
}

/// Everything measured in one noisy-vs-clean comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbTrial {
    pub trial: usize,
    pub sequence: usize,
    pub seed: u64,
    pub sigma_eps: f64,
    pub clean_outputs: Vector,
    pub noisy_outputs: Vector,
    /// `‖ŷ − y‖²`
    pub sigma_y_sq: f64,
    /// Realized `Σ_t ‖x̂(t) − x(t)‖²` over the window.
    pub sigma_x_sq: f64,
    pub sigma_h: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub sigma_net_o: Vec<f64>,
    /// Steps where any theorem check failed.
    pub step_violations: usize,
    pub output_layer_ok: bool,
    /// Steps where some `|s_j| ≥ 1` on the clean run.
    pub saturated_steps: usize,
}

/// Aggregate of a Monte-Carlo run. Field names are part of the report format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub n_trials: usize,
    pub sigma_eps: f64,
    pub emp_sigma_y2_mean: f64,
    pub emp_sigma_y2_median: f64,
    pub emp_sigma_y2_max: f64,
    /// Loose bound at the mean realized `σ_x²`; `None` when not applicable.
    pub bound_loose: Option<f64>,
    pub bound_tight: Option<f64>,
    pub ratio_p50: Option<f64>,
    pub ratio_p95: Option<f64>,
    pub ratio_max: Option<f64>,
    pub step_violations: usize,
    pub s_saturation_fraction: f64,
    pub bound_applicable: bool,
    pub sigma_x2_mean: f64,
    pub rho_h_sq: f64,
    pub output_gate_gain: f64,
    /// Fraction of trials with `σ_y² ≤` the loose bound at that trial's `σ_x²`.
    pub loose_holds_fraction: Option<f64>,
    pub tight_holds_fraction: Option<f64>,
    /// Trials where the loose bound failed.
    pub loose_violations: Vec<LooseViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooseViolation {
    pub trial: usize,
    pub sequence: usize,
    pub sigma_y_sq: f64,
    pub bound: f64,
}

/// One row of the `(σ_ε, empirical, bound)` table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTableRow {
    pub sigma_eps: f64,
    pub empirical: f64,
    pub bound_loose: Option<f64>,
    pub bound_tight: Option<f64>,
}

impl PerturbReport {
    pub fn table_row(&self) -> BoundTableRow {
        BoundTableRow {
            sigma_eps: self.sigma_eps,
            empirical: self.emp_sigma_y2_mean,
            bound_loose: self.bound_loose,
            bound_tight: self.bound_tight,
        }
    }
}

/// Runs `n_trials` noisy-vs-clean comparisons; trial `k` perturbs
/// `sequences[k % len]` with its own random stream.
pub fn run_perturbation_experiment(
    params: &ModelParams,
    sequences: &[Sequence],
    sigma_eps: f64,
    n_trials: usize,
    seed: u64,
    config: &RegConfig,
) -> Result<PerturbReport> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("at least one sequence is required".into()));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_eps must be finite and >= 0, got {sigma_eps}")));
    }

    let trials = (0..n_trials)
        .into_par_iter()
        .map(|k| run_trial(params, sequences, sigma_eps, k, trial_seed(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;

    let coeffs = tikhonov::coefficients(params, config);
    Ok(aggregate(&trials, sigma_eps, &coeffs))
}

fn run_trial(params: &ModelParams, sequences: &[Sequence], sigma_eps: f64, k: usize, seed: u64) -> Result<PerturbTrial> {
    let idx = k % sequences.len();
    let seq = &sequences[idx];
    let noisy_seq = inject_noise(seq, sigma_eps, seed);
    let (y, clean) = forward(params, seq)?;
    let (y_hat, noisy) = forward(params, &noisy_seq)?;

    let sigma_x_sq = seq
        .inputs
        .iter()
        .zip(&noisy_seq.inputs)
        .map(|(x, xh)| xh.dist_sq(x))
        .sum::<Result<f64>>()?;

    let mut sigma_h = Vec::with_capacity(clean.len());
    let mut sigma_s = Vec::with_capacity(clean.len());
    let mut sigma_net_o = Vec::with_capacity(clean.len());
    let mut step_violations = 0;
    let mut saturated_steps = 0;
    for (c, n) in clean.iter().zip(&noisy) {
        sigma_h.push(n.h.dist_sq(&c.h)?.sqrt());
        sigma_s.push(n.s.dist_sq(&c.s)?.sqrt());
        sigma_net_o.push(n.net_o.dist_sq(&c.net_o)?.sqrt());
        let h_ok = check_h_step_invariant(c, n)?.ok;
        // i ⊙ ci = tanh(net_ci) ⊙ σ(net_i)
        let gate_ok = check_hadamard_invariant(&c.net_ci, &c.net_i, &n.net_ci, &n.net_i)?.ok;
        if !(h_ok && gate_ok) {
            step_violations += 1;
        }
        if c.s.iter().any(|s| s.abs() >= 1.0) {
            saturated_steps += 1;
        }
    }
    let h_last = &clean.last().expect("nonempty").h;
    let h_hat_last = &noisy.last().expect("nonempty").h;
    let output_layer_ok = check_output_layer_invariant(&params.w_hy, h_last, h_hat_last)?.ok;
    if !output_layer_ok {
        step_violations += 1;
    }

    Ok(PerturbTrial {
        trial: k,
        sequence: idx,
        seed,
        sigma_eps,
        sigma_y_sq: y_hat.dist_sq(&y)?,
        clean_outputs: y,
        noisy_outputs: y_hat,
        sigma_x_sq,
        sigma_h,
        sigma_s,
        sigma_net_o,
        step_violations,
        output_layer_ok,
        saturated_steps,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Folds trials, in trial order, into a report.
pub fn aggregate(trials: &[PerturbTrial], sigma_eps: f64, coeffs: &RegCoefficients) -> PerturbReport {
    let n = trials.len();
    let y2 = sorted(trials.iter().map(|t| t.sigma_y_sq).collect());
    let mean = |xs: &mut dyn Iterator<Item = f64>| xs.sum::<f64>() / n as f64;
    let emp_mean = mean(&mut trials.iter().map(|t| t.sigma_y_sq));
    let sigma_x2_mean = mean(&mut trials.iter().map(|t| t.sigma_x_sq));
    let total_steps: usize = trials.iter().map(|t| t.sigma_h.len()).sum();
    let saturated: usize = trials.iter().map(|t| t.saturated_steps).sum();

    let factor = coeffs.bound_factor();
    let applicable = factor.is_some();
    let mut ratios = Vec::new();
    let mut loose_ok = 0usize;
    let mut tight_ok = 0usize;
    let mut loose_violations = Vec::new();
    let mut bound_loose = None;
    let mut bound_tight = None;
    if applicable {
        let at = |sx2: f64| theoretical_bound_from_coeffs(coeffs, sx2).expect("feasible");
        let b = at(sigma_x2_mean);
        bound_loose = Some(b.loose);
        bound_tight = Some(b.tight);
        for t in trials {
            let b = at(t.sigma_x_sq);
            ratios.push(if t.sigma_y_sq == 0.0 { 0.0 } else { t.sigma_y_sq / b.loose });
            if t.sigma_y_sq <= b.loose {
                loose_ok += 1;
            } else {
                loose_violations.push(LooseViolation {
                    trial: t.trial,
                    sequence: t.sequence,
                    sigma_y_sq: t.sigma_y_sq,
                    bound: b.loose,
                });
            }
            if t.sigma_y_sq <= b.tight {
                tight_ok += 1;
            }
        }
    }
    let ratios = sorted(ratios);
    let q = |p: f64| applicable.then(|| quantile(&ratios, p));

    PerturbReport {
        n_trials: n,
        sigma_eps,
        emp_sigma_y2_mean: emp_mean,
        emp_sigma_y2_median: quantile(&y2, 0.5),
        emp_sigma_y2_max: y2.last().copied().unwrap_or(0.0),
        bound_loose,
        bound_tight,
        ratio_p50: q(0.5),
        ratio_p95: q(0.95),
        ratio_max: q(1.0),
        step_violations: trials.iter().map(|t| t.step_violations).sum(),
        s_saturation_fraction: if total_steps == 0 { 0.0 } else { saturated as f64 / total_steps as f64 },
        bound_applicable: applicable,
        sigma_x2_mean,
        rho_h_sq: coeffs.rho_h_sq(),
        output_gate_gain: coeffs.output_gate_gain(),
        loose_holds_fraction: applicable.then(|| loose_ok as f64 / n as f64),
        tight_holds_fraction: applicable.then(|| tight_ok as f64 / n as f64),
        loose_violations,
    }
}

/// Table rows for several noise levels, each with its own experiment.
pub fn bound_table(
    params: &ModelParams,
    sequences: &[Sequence],
    levels: &[f64],
    n_trials: usize,
    seed: u64,
    config: &RegConfig,
) -> Result<Vec<BoundTableRow>> {
    levels
        .iter()
        .map(|&s| run_perturbation_experiment(params, sequences, s, n_trials, seed, config).map(|r| r.table_row()))
        .collect()
}

/// Writes table rows as CSV: `sigma_eps,empirical,bound_loose,bound_tight`.
pub fn write_bound_table<W: std::io::Write>(rows: &[BoundTableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_eps", "empirical", "bound_loose", "bound_tight"])?;
    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| v.to_string());
    for r in rows {
        w.write_record([r.sigma_eps.to_string(), r.empirical.to_string(), opt(r.bound_loose), opt(r.bound_tight)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    fn seqs(dims: Dims, n: usize, len: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let inputs = (0..len)
                    .map(|_| Vector::new((0..dims.input).map(|_| rng.random_range(-1.0..1.0)).collect()))
                    .collect();
                Sequence::new(inputs, Vector::filled(dims.output, 0.5))
            })
            .collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = &seqs(Dims::new(3, 2, 1), 1, 4, 0)[0];
        assert_eq!(&inject_noise(s, 0.0, 7), s);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let s = &seqs(Dims::new(3, 2, 1), 1, 4, 0)[0];
        assert_eq!(inject_noise(s, 0.1, 7), inject_noise(s, 0.1, 7));
        assert_ne!(inject_noise(s, 0.1, 7), inject_noise(s, 0.1, 8));
    }

    #[test]
    fn noise_variance_matches() {
        let sigma = 0.3;
        let s = Sequence::new(vec![Vector::zeros(1000); 100], v(&[0.5]));
        let noisy = inject_noise(&s, sigma, 42);
        let draws: Vec<f64> = noisy.inputs.iter().flat_map(|x| x.iter().copied()).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn hadamard_check_examples() {
        let c = check_hadamard_invariant(&v(&[0.3]), &v(&[-1.0]), &v(&[0.3]), &v(&[-1.0])).unwrap();
        assert_eq!((c.lhs, c.rhs, c.ok), (0.0, 0.0, true));
        let c = check_hadamard_invariant(&v(&[0.0]), &v(&[0.0]), &v(&[0.1]), &v(&[0.0])).unwrap();
        assert!((c.lhs - 0.0024834272881400555).abs() < 1e-15);
        assert!((c.rhs - 0.010625).abs() < 1e-15);
        assert!(c.ok);
    }

    #[test]
    fn output_layer_check_examples() {
        let w = Matrix::from_rows(&[&[1.0]]);
        let c = check_output_layer_invariant(&w, &v(&[0.4]), &v(&[0.4])).unwrap();
        assert_eq!((c.lhs, c.rhs, c.ok), (0.0, 0.0, true));
        let c = check_output_layer_invariant(&w, &v(&[0.0]), &v(&[0.2])).unwrap();
        assert!((c.lhs - 0.00248342728814006).abs() < 1e-15);
        assert!((c.rhs - 0.0025).abs() < 1e-15);
        assert!(c.ok);
    }

    #[test]
    fn h_step_check_scalar_case() {
        let mut p = ModelParams::zeros(Dims::new(1, 1, 1));
        p.b_ci = v(&[0.0]);
        let x = v(&[0.0]);
        let prev = crate::lstm::LstmState::zeros(1);
        let (_, clean) = crate::lstm::cell_step(&p, &x, &prev).unwrap();
        let mut noisy = clean.clone();
        noisy.s = v(&[0.1]);
        noisy.co = noisy.s.map(f64::tanh);
        noisy.h = hadamard(&noisy.co, &noisy.o).unwrap();
        let c = check_h_step_invariant(&clean, &noisy).unwrap();
        assert!((c.lhs - 0.0024834272881400555).abs() < 1e-15);
        assert!((c.rhs - 0.010625).abs() < 1e-15);
        assert!(c.rhs_beta_sq > c.rhs);
        assert!(c.ok);
        let same = check_h_step_invariant(&clean, &clean).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
    }

    #[test]
    fn theoretical_bound_examples() {
        let zero = ModelParams::zeros(Dims::new(2, 2, 1));
        let b = theoretical_bound(&zero, &RegConfig::default(), 1.0).unwrap();
        assert_eq!((b.loose, b.tight), (0.0, 0.0));
        let c = RegCoefficients { norm_hy: 2.0, rho_x: 0.5, rho_h: 0.5, ..RegCoefficients::default() };
        let b = theoretical_bound_from_coeffs(&c, 1.0).unwrap();
        assert!((b.loose - 4.0 / 3.0).abs() < 1e-12);
        assert!((b.tight - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(b.tight, b.loose / 16.0);
        let bad = RegCoefficients { rho_h: 2.0, ..c };
        assert!(theoretical_bound_from_coeffs(&bad, 1.0).is_err());
    }

    #[test]
    fn feasible_generator_hits_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exact = RegConfig { power: TIGHT_POWER, ..RegConfig::default() };
        for _ in 0..50 {
            let p = random_feasible_params(Dims::new(3, 5, 2), 0.5, 0.9, &mut rng);
            let c = tikhonov::coefficients(&p, &exact);
            assert!(c.rho_h_sq() <= 0.5 + 1e-9, "{}", c.rho_h_sq());
            assert!(c.output_gate_gain() <= 0.9 + 1e-9);
        }
    }

    #[test]
    fn zero_noise_experiment_is_all_zero() {
        let dims = Dims::new(2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_feasible_params(dims, 0.5, 0.9, &mut rng);
        let r = run_perturbation_experiment(&p, &seqs(dims, 3, 6, 2), 0.0, 10, 5, &RegConfig::default()).unwrap();
        assert_eq!(r.emp_sigma_y2_max, 0.0);
        assert_eq!(r.sigma_x2_mean, 0.0);
        assert_eq!(r.bound_loose, Some(0.0));
        assert_eq!(r.ratio_max, Some(0.0));
        assert_eq!(r.step_violations, 0);
    }

    #[test]
    fn experiment_is_deterministic_and_violation_free() {
        let dims = Dims::new(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_feasible_params(dims, 0.5, 0.9, &mut rng);
        let s = seqs(dims, 4, 10, 3);
        let a = run_perturbation_experiment(&p, &s, 1e-2, 40, 11, &RegConfig::default()).unwrap();
        let b = run_perturbation_experiment(&p, &s, 1e-2, 40, 11, &RegConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.step_violations, 0);
        assert!(a.step_violations <= a.n_trials * 10);
        assert!(a.emp_sigma_y2_mean > 0.0);
    }

    #[test]
    fn infeasible_model_marks_bound_not_applicable() {
        let dims = Dims::new(2, 2, 1);
        let mut p = ModelParams::zeros(dims);
        for m in [&mut p.w_ih, &mut p.w_fh, &mut p.w_cih, &mut p.w_ix] {
            *m = Matrix::identity(2).scale(2.0);
        }
        p.w_hy = Matrix::from_rows(&[&[1.0, 1.0]]);
        let r = run_perturbation_experiment(&p, &seqs(dims, 2, 5, 1), 1e-3, 5, 0, &RegConfig::default()).unwrap();
        assert!(!r.bound_applicable);
        assert_eq!(r.bound_loose, None);
        assert_eq!(r.ratio_p95, None);
        assert_eq!(r.step_violations, 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let dims = Dims::new(1, 1, 1);
        let p = ModelParams::zeros(dims);
        let s = seqs(dims, 1, 2, 0);
        let cfg = RegConfig::default();
        assert!(run_perturbation_experiment(&p, &s, 0.1, 0, 0, &cfg).is_err());
        assert!(run_perturbation_experiment(&p, &[], 0.1, 1, 0, &cfg).is_err());
        assert!(run_perturbation_experiment(&p, &s, -0.1, 1, 0, &cfg).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 1.0), 3.0);
    }

    #[test]
    fn table_csv_layout() {
        let rows = [
            BoundTableRow { sigma_eps: 0.001, empirical: 1e-7, bound_loose: Some(2e-5), bound_tight: Some(1.25e-6) },
            BoundTableRow { sigma_eps: 0.01, empirical: 1e-5, bound_loose: None, bound_tight: None },
        ];
        let mut buf = Vec::new();
        write_bound_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "sigma_eps,empirical,bound_loose,bound_tight\n0.001,0.0000001,0.00002,0.00000125\n0.01,0.00001,NA,NA\n"
        );
    }
}
