//! Central finite differences against the analytic gradients.

use crate::linalg::singular_gap;
use crate::lstm::{loss_and_grad, ModelParams, Sequence};
use crate::tikhonov::{objective, RegConfig};
use crate::Result;

/// Outcome of comparing an analytic gradient with finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − f| / max(|a|, |f|, floor)` over all entries.
    pub max_rel_error: f64,
    /// Flat index where the largest error occurs.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Central difference of `f` at `x` along every coordinate.
pub fn central_differences(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let plus = f(&probe);
            probe[k] = x[k] - step;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Compares two gradient vectors entrywise. Entries where both sides are
/// below `floor` in magnitude are measured against `floor`.
pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> GradCheck {
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for (k, (&a, &f)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - f).abs() / a.abs().max(f.abs()).max(floor);
        if rel > worst.max_rel_error || rel.is_nan() {
            worst = GradCheck { max_rel_error: rel, worst_index: k, analytic: a, numeric: f };
        }
    }
    worst
}

/// Checks the BPTT gradient of the per-sequence MSE.
pub fn check_mse_grad(params: &ModelParams, seq: &Sequence, step: f64, floor: f64) -> Result<GradCheck> {
    let (_, grad) = loss_and_grad(params, seq)?;
    let mut probe = params.clone();
    let numeric = central_differences(&params.to_flat(), step, |x| {
        probe.set_flat(x).expect("same layout");
        loss_and_grad(&probe, seq).map(|(l, _)| l).unwrap_or(f64::NAN)
    });
    Ok(compare(&grad.to_flat(), &numeric, floor))
}

/// `R + pen1 + pen2` at `params`.
pub fn penalty_value(params: &ModelParams, config: &RegConfig) -> f64 {
    let o = objective(params, 0.0, config);
    o.reg + o.pen1 + o.pen2
}

/// Checks `∂(R + penalties)/∂θ`.
pub fn check_penalty_grad(params: &ModelParams, config: &RegConfig, step: f64, floor: f64) -> GradCheck {
    let grad = crate::tikhonov::penalty_grad(params, config).grad;
    let mut probe = params.clone();
    let numeric = central_differences(&params.to_flat(), step, |x| {
        probe.set_flat(x).expect("same layout");
        penalty_value(&probe, config)
    });
    compare(&grad.to_flat(), &numeric, floor)
}

/// Smallest `σ₁ − σ₂` over the nine regularized weight matrices.
pub fn min_singular_gap(params: &ModelParams) -> f64 {
    [
        &params.w_ox, &params.w_oh, &params.w_fx, &params.w_fh, &params.w_ix, &params.w_ih, &params.w_cix,
        &params.w_cih, &params.w_hy,
    ]
    .into_iter()
    .map(singular_gap)
    .fold(f64::INFINITY, f64::min)
}
