//! Closed-form Tikhonov regularizer for the LSTM.
//!
//! Bounding how far the hidden state moves under an input perturbation gives
//!
//! ```text
//! γ̄_x = α‖W_fx‖ + β(‖W_ix‖ + ‖W_cix‖)
//! γ̄_h = α‖W_fh‖ + β(‖W_ih‖ + ‖W_cih‖)
//! ρ_x = √2 (γ̄_x + √2 (β γ̄_x ‖W_oh‖ + ‖W_ox‖) / exp(1 − β‖W_oh‖))
//! ρ_h = √2 (γ̄_h + β γ̄_h ‖W_oh‖ / exp(1 − β‖W_oh‖))
//! R(θ) = λ_S ‖W_hy‖² ρ_x² / (1 − ρ_h²)
//! L(θ) = MSE + R + λ₁ (ρ_h² − 1)₊ + λ₂ (β‖W_oh‖ − 1)₊
//! ```
//!
//! with `α = 1/4` (the maximum slope of the sigmoid) and `β = 17/16` (the
//! maximum of `‖∇ tanh(ξ₁)σ(ξ₂)‖²`). `R` is only defined while `ρ_h² < 1`;
//! outside that region the objective drops `R` and lets the `λ₁` hinge pull
//! the parameters back.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::linalg::{matrix_norm, matrix_norm_with_grad, Matrix, NormMode, PowerIteration};
use crate::lstm::{ModelParams, ParamGrads};

/// Maximum of `σ'(x)`.
pub const ALPHA: f64 = 0.25;
/// Maximum of `‖∇G‖²` for `G(ξ) = tanh(ξ₁)σ(ξ₂)`, attained at the origin.
pub const BETA: f64 = 17.0 / 16.0;

pub fn lipschitz_constants() -> (f64, f64) {
    (ALPHA, BETA)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    /// Input-perturbation scale; `σ_ε²` for noise of standard deviation `σ_ε`.
    pub lambda_s: f64,
    /// Weight of the `(ρ_h² − 1)₊` penalty.
    pub lambda_1: f64,
    /// Weight of the `(β‖W_oh‖ − 1)₊` penalty.
    pub lambda_2: f64,
    pub norm_mode: NormMode,
    pub power: PowerIteration,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            lambda_s: 1e-3,
            lambda_1: 10.0,
            lambda_2: 10.0,
            norm_mode: NormMode::Spectral,
            power: PowerIteration::default(),
        }
    }
}

impl RegConfig {
    /// `λ_S = σ_ε²` for Gaussian input noise of standard deviation `sigma_eps`.
    pub fn for_noise_std(sigma_eps: f64) -> Self {
        RegConfig { lambda_s: sigma_eps * sigma_eps, ..RegConfig::default() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_1", self.lambda_1), ("lambda_2", self.lambda_2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(crate::Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.power.max_iters == 0 || !(self.power.tol > 0.0) {
            return Err(crate::Error::InvalidConfig("power iteration needs max_iters >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

/// Every scalar that enters the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub norm_ox: f64,
    pub norm_oh: f64,
    pub norm_fx: f64,
    pub norm_fh: f64,
    pub norm_ix: f64,
    pub norm_ih: f64,
    pub norm_cix: f64,
    pub norm_cih: f64,
    pub norm_hy: f64,
    pub gamma_bar_x: f64,
    pub gamma_bar_h: f64,
    pub rho_x: f64,
    pub rho_h: f64,
}

impl Default for RegCoefficients {
    fn default() -> Self {
        RegCoefficients {
            alpha: ALPHA,
            beta: BETA,
            norm_ox: 0.0,
            norm_oh: 0.0,
            norm_fx: 0.0,
            norm_fh: 0.0,
            norm_ix: 0.0,
            norm_ih: 0.0,
            norm_cix: 0.0,
            norm_cih: 0.0,
            norm_hy: 0.0,
            gamma_bar_x: 0.0,
            gamma_bar_h: 0.0,
            rho_x: 0.0,
            rho_h: 0.0,
        }
    }
}

impl RegCoefficients {
    /// Fills `gamma_bar_*` and `rho_*` from the norm fields.
    pub fn complete(mut self) -> Self {
        (self.gamma_bar_x, self.gamma_bar_h) = gamma_bars(&self);
        (self.rho_x, self.rho_h) = rho(&self);
        self
    }

    pub fn rho_h_sq(&self) -> f64 {
        self.rho_h * self.rho_h
    }

    /// `β‖W_oh‖`, which must stay ≤ 1.
    pub fn output_gate_gain(&self) -> f64 {
        self.beta * self.norm_oh
    }

    pub fn is_feasible(&self) -> bool {
        self.rho_h_sq() < 1.0 && self.output_gate_gain() <= 1.0
    }

    /// `ρ_x² / (1 − ρ_h²)`, or `None` when `ρ_h² ≥ 1`.
    pub fn bound_factor(&self) -> Option<f64> {
        let denom = 1.0 - self.rho_h_sq();
        (denom > 0.0).then(|| self.rho_x * self.rho_x / denom)
    }
}

/// Signalled when `ρ_h² ≥ 1`, where the closed-form bound does not exist.
#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("constraint violated: rho_h^2 = {rho_h_sq} >= 1")]
pub struct ConstraintViolated {
    pub rho_h_sq: f64,
}

/// The nine matrix norms under the configured norm; derived fields left at zero.
pub fn gate_norms(params: &ModelParams, config: &RegConfig) -> RegCoefficients {
    let n = |w: &Matrix| matrix_norm(w, config.norm_mode, config.power);
    RegCoefficients {
        norm_ox: n(&params.w_ox),
        norm_oh: n(&params.w_oh),
        norm_fx: n(&params.w_fx),
        norm_fh: n(&params.w_fh),
        norm_ix: n(&params.w_ix),
        norm_ih: n(&params.w_ih),
        norm_cix: n(&params.w_cix),
        norm_cih: n(&params.w_cih),
        norm_hy: n(&params.w_hy),
        ..RegCoefficients::default()
    }
}

pub fn gamma_bars(c: &RegCoefficients) -> (f64, f64) {
    let gx = c.alpha * c.norm_fx + c.beta * (c.norm_ix + c.norm_cix);
    let gh = c.alpha * c.norm_fh + c.beta * (c.norm_ih + c.norm_cih);
    (gx, gh)
}

pub fn rho(c: &RegCoefficients) -> (f64, f64) {
    let e = (1.0 - c.beta * c.norm_oh).exp();
    let rho_x = SQRT_2 * (c.gamma_bar_x + SQRT_2 * (c.beta * c.gamma_bar_x * c.norm_oh + c.norm_ox) / e);
    let rho_h = SQRT_2 * (c.gamma_bar_h + c.beta * c.gamma_bar_h * c.norm_oh / e);
    (rho_x, rho_h)
}

/// Norms, `γ̄` and `ρ` for a parameter set.
pub fn coefficients(params: &ModelParams, config: &RegConfig) -> RegCoefficients {
    gate_norms(params, config).complete()
}

/// `λ_S ‖W_hy‖² ρ_x² / (1 − ρ_h²)` from precomputed coefficients.
pub fn regularizer_value(c: &RegCoefficients, lambda_s: f64) -> Result<f64, ConstraintViolated> {
    match c.bound_factor() {
        Some(b) => Ok(lambda_s * c.norm_hy * c.norm_hy * b),
        None => Err(ConstraintViolated { rho_h_sq: c.rho_h_sq() }),
    }
}

pub fn regularizer(params: &ModelParams, config: &RegConfig) -> Result<f64, ConstraintViolated> {
    regularizer_value(&coefficients(params, config), config.lambda_s)
}

/// `max(0, u)`
pub fn hinge(u: f64) -> f64 {
    u.max(0.0)
}

/// Subgradient of [`hinge`]; zero at the kink.
pub fn hinge_subgradient(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// The relaxed objective split into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub mse: f64,
    pub reg: f64,
    pub pen1: f64,
    pub pen2: f64,
}

impl Objective {
    pub fn new(mse: f64, reg: f64, pen1: f64, pen2: f64) -> Self {
        Objective { total: mse + reg + pen1 + pen2, mse, reg, pen1, pen2 }
    }
}

pub fn objective_from_coeffs(c: &RegCoefficients, batch_mse: f64, config: &RegConfig) -> Objective {
    let reg = regularizer_value(c, config.lambda_s).unwrap_or(0.0);
    let pen1 = config.lambda_1 * hinge(c.rho_h_sq() - 1.0);
    let pen2 = config.lambda_2 * hinge(c.output_gate_gain() - 1.0);
    Objective::new(batch_mse, reg, pen1, pen2)
}

pub fn objective(params: &ModelParams, batch_mse: f64, config: &RegConfig) -> Objective {
    objective_from_coeffs(&coefficients(params, config), batch_mse, config)
}

/// Regularizer-plus-penalty value and its gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct PenaltyGrad {
    pub coefficients: RegCoefficients,
    /// Parts with `mse` set to zero.
    pub parts: Objective,
    pub grad: ParamGrads,
}

/// Gradient of `R + λ₁(ρ_h² − 1)₊ + λ₂(β‖W_oh‖ − 1)₊`.
///
/// Chains through the norm gradients, the affine `γ̄` maps, the `ρ` formulas
/// and the quotient. Only weight matrices (not biases) receive a gradient.
pub fn penalty_grad(params: &ModelParams, config: &RegConfig) -> PenaltyGrad {
    let norm = |w: &Matrix| matrix_norm_with_grad(w, config.norm_mode, config.power);
    let (n_ox, g_ox) = norm(&params.w_ox);
    let (n_oh, g_oh) = norm(&params.w_oh);
    let (n_fx, g_fx) = norm(&params.w_fx);
    let (n_fh, g_fh) = norm(&params.w_fh);
    let (n_ix, g_ix) = norm(&params.w_ix);
    let (n_ih, g_ih) = norm(&params.w_ih);
    let (n_cix, g_cix) = norm(&params.w_cix);
    let (n_cih, g_cih) = norm(&params.w_cih);
    let (n_hy, g_hy) = norm(&params.w_hy);
    let c = RegCoefficients {
        norm_ox: n_ox,
        norm_oh: n_oh,
        norm_fx: n_fx,
        norm_fh: n_fh,
        norm_ix: n_ix,
        norm_ih: n_ih,
        norm_cix: n_cix,
        norm_cih: n_cih,
        norm_hy: n_hy,
        ..RegCoefficients::default()
    }
    .complete();
    let parts = objective_from_coeffs(&c, 0.0, config);

    let (a, b) = (c.alpha, c.beta);
    let (gx, gh) = (c.gamma_bar_x, c.gamma_bar_h);
    let q = (b * n_oh - 1.0).exp(); // 1 / exp(1 − β‖W_oh‖)
    let rho_h_sq = c.rho_h_sq();

    // d(total)/d(rho_x), d(total)/d(rho_h), and direct norm terms
    let mut d_rho_x = 0.0;
    let mut d_rho_h = 0.0;
    let mut d_n_hy = 0.0;
    let mut d_n_oh = 0.0;
    if let Some(factor) = c.bound_factor() {
        let denom = 1.0 - rho_h_sq;
        let ls = config.lambda_s;
        d_n_hy = 2.0 * ls * n_hy * factor;
        d_rho_x = ls * n_hy * n_hy * 2.0 * c.rho_x / denom;
        d_rho_h = ls * n_hy * n_hy * c.rho_x * c.rho_x * 2.0 * c.rho_h / (denom * denom);
    }
    d_rho_h += config.lambda_1 * hinge_subgradient(rho_h_sq - 1.0) * 2.0 * c.rho_h;
    d_n_oh += config.lambda_2 * hinge_subgradient(b * n_oh - 1.0) * b;

    // rho_x = √2 γ̄_x + 2 (β γ̄_x n_oh + n_ox) q
    let d_gx = d_rho_x * SQRT_2 * (1.0 + SQRT_2 * b * n_oh * q);
    let d_n_ox = d_rho_x * 2.0 * q;
    d_n_oh += d_rho_x * 2.0 * b * q * (gx + b * gx * n_oh + n_ox);
    // rho_h = √2 γ̄_h (1 + β n_oh q)
    let d_gh = d_rho_h * SQRT_2 * (1.0 + b * n_oh * q);
    d_n_oh += d_rho_h * SQRT_2 * gh * b * q * (1.0 + b * n_oh);

    let mut grad = ModelParams::zeros(params.dims);
    grad.w_ox = g_ox.scale(d_n_ox);
    grad.w_oh = g_oh.scale(d_n_oh);
    grad.w_fx = g_fx.scale(d_gx * a);
    grad.w_ix = g_ix.scale(d_gx * b);
    grad.w_cix = g_cix.scale(d_gx * b);
    grad.w_fh = g_fh.scale(d_gh * a);
    grad.w_ih = g_ih.scale(d_gh * b);
    grad.w_cih = g_cih.scale(d_gh * b);
    grad.w_hy = g_hy.scale(d_n_hy);

    PenaltyGrad { coefficients: c, parts, grad }
}

/// `mse_grads + ∂(R + penalties)/∂θ`.
pub fn objective_grad(params: &ModelParams, mse_grads: &ParamGrads, config: &RegConfig) -> ParamGrads {
    let mut out = mse_grads.clone();
    if config.lambda_s == 0.0 && config.lambda_1 == 0.0 && config.lambda_2 == 0.0 {
        return out;
    }
    out.add_scaled(1.0, &penalty_grad(params, config).grad);
    out
}

/// Flat report of every coefficient, `R(θ)` and both hinge values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    #[serde(flatten)]
    pub coefficients: RegCoefficients,
    pub rho_h_sq: f64,
    pub output_gate_gain: f64,
    pub lambda_s: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// `None` when `ρ_h² ≥ 1`.
    pub regularizer: Option<f64>,
    pub feasible: bool,
    /// `(ρ_h² − 1)₊`
    pub hinge_rho_h: f64,
    /// `(β‖W_oh‖ − 1)₊`
    pub hinge_output_gate: f64,
    pub pen1: f64,
    pub pen2: f64,
}

impl InspectReport {
    pub fn new(params: &ModelParams, config: &RegConfig) -> Self {
        let c = coefficients(params, config);
        let parts = objective_from_coeffs(&c, 0.0, config);
        InspectReport {
            coefficients: c,
            rho_h_sq: c.rho_h_sq(),
            output_gate_gain: c.output_gate_gain(),
            lambda_s: config.lambda_s,
            lambda_1: config.lambda_1,
            lambda_2: config.lambda_2,
            regularizer: regularizer_value(&c, config.lambda_s).ok(),
            feasible: c.is_feasible(),
            hinge_rho_h: hinge(c.rho_h_sq() - 1.0),
            hinge_output_gate: hinge(c.output_gate_gain() - 1.0),
            pen1: parts.pen1,
            pen2: parts.pen2,
        }
    }

    /// One `key = value` line per field.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                let v = match v {
                    serde_json::Value::Null => "n/a".to_string(),
                    other => other.to_string(),
                };
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
