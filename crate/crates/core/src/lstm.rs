//! Many-to-one LSTM: cell step, sigmoid dense head, MSE, and BPTT.
//!
//! The cell has no peepholes and the head has no bias:
//!
//! ```text
//! net_u = W_ux x + W_uh h_prev + b_u          u in {i, o, f, ci}
//! i, o, f = sigmoid(net_i), sigmoid(net_o), sigmoid(net_f)
//! ci = tanh(net_ci)
//! s = s_prev ⊙ f + i ⊙ ci
//! h = tanh(s) ⊙ o
//! y = sigmoid(W_hy h(l))
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, hadamard, matvec, matvec_t, sigmoid, Matrix, Vector};
use crate::tikhonov::BETA;

/// Layer sizes: input `X`, hidden `N_h`, output `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Dims {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Dims { input, hidden, output }
    }
}

/// Names of the parameter tensors in their canonical (checkpoint) order.
pub const PARAM_NAMES: [&str; 13] = [
    "W_ix", "W_ih", "W_ox", "W_oh", "W_fx", "W_fh", "W_cix", "W_cih", "b_i", "b_o", "b_f", "b_ci", "W_hy",
];

/// All trainable weights of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub w_ix: Matrix,
    pub w_ih: Matrix,
    pub w_ox: Matrix,
    pub w_oh: Matrix,
    pub w_fx: Matrix,
    pub w_fh: Matrix,
    pub w_cix: Matrix,
    pub w_cih: Matrix,
    pub b_i: Vector,
    pub b_o: Vector,
    pub b_f: Vector,
    pub b_ci: Vector,
    pub w_hy: Matrix,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { input: x, hidden: n, output: y } = dims;
        ModelParams {
            dims,
            w_ix: Matrix::zeros(n, x),
            w_ih: Matrix::zeros(n, n),
            w_ox: Matrix::zeros(n, x),
            w_oh: Matrix::zeros(n, n),
            w_fx: Matrix::zeros(n, x),
            w_fh: Matrix::zeros(n, n),
            w_cix: Matrix::zeros(n, x),
            w_cih: Matrix::zeros(n, n),
            b_i: Vector::zeros(n),
            b_o: Vector::zeros(n),
            b_f: Vector::zeros(n),
            b_ci: Vector::zeros(n),
            w_hy: Matrix::zeros(y, n),
        }
    }

    /// Uniform `[-r, r]` with `r = 1/sqrt(fan_in)`; gate matrices see
    /// `X + N_h` inputs, the head sees `N_h`. Biases start at zero.
    /// `W_oh` is then shrunk, if needed, so that `β‖W_oh‖ ≤ 0.9`.
    pub fn init_uniform<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let mut p = ModelParams::zeros(dims);
        let gate_r = 1.0 / ((dims.input + dims.hidden) as f64).sqrt();
        let head_r = 1.0 / (dims.hidden as f64).sqrt();
        for (name, data) in p.tensors_mut() {
            let r = match name {
                "W_hy" => head_r,
                n if n.starts_with('b') => continue,
                _ => gate_r,
            };
            for x in data.iter_mut() {
                *x = rng.random_range(-r..=r);
            }
        }
        let n_oh = linalg::spectral_norm_default(&p.w_oh).value;
        if BETA * n_oh > 0.9 {
            p.w_oh.scale_in_place(0.9 / (BETA * n_oh));
        }
        p
    }

    /// Parameter tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 13] {
        [
            ("W_ix", self.w_ix.as_slice()),
            ("W_ih", self.w_ih.as_slice()),
            ("W_ox", self.w_ox.as_slice()),
            ("W_oh", self.w_oh.as_slice()),
            ("W_fx", self.w_fx.as_slice()),
            ("W_fh", self.w_fh.as_slice()),
            ("W_cix", self.w_cix.as_slice()),
            ("W_cih", self.w_cih.as_slice()),
            ("b_i", self.b_i.as_slice()),
            ("b_o", self.b_o.as_slice()),
            ("b_f", self.b_f.as_slice()),
            ("b_ci", self.b_ci.as_slice()),
            ("W_hy", self.w_hy.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 13] {
        [
            ("W_ix", self.w_ix.as_mut_slice()),
            ("W_ih", self.w_ih.as_mut_slice()),
            ("W_ox", self.w_ox.as_mut_slice()),
            ("W_oh", self.w_oh.as_mut_slice()),
            ("W_fx", self.w_fx.as_mut_slice()),
            ("W_fh", self.w_fh.as_mut_slice()),
            ("W_cix", self.w_cix.as_mut_slice()),
            ("W_cih", self.w_cih.as_mut_slice()),
            ("b_i", self.b_i.as_mut_slice()),
            ("b_o", self.b_o.as_mut_slice()),
            ("b_f", self.b_f.as_mut_slice()),
            ("b_ci", self.b_ci.as_mut_slice()),
            ("W_hy", self.w_hy.as_mut_slice()),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattened copy of every parameter in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Overwrites all parameters from a flat slice in canonical order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::DimensionMismatch { op: "set_flat", expected: n, found: flat.len() });
        }
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += c * other`, elementwise over every tensor.
    pub fn add_scaled(&mut self, c: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Checks every tensor shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let Dims { input: x, hidden: n, output: y } = self.dims;
        let mats = [
            (&self.w_ix, (n, x)),
            (&self.w_ih, (n, n)),
            (&self.w_ox, (n, x)),
            (&self.w_oh, (n, n)),
            (&self.w_fx, (n, x)),
            (&self.w_fh, (n, n)),
            (&self.w_cix, (n, x)),
            (&self.w_cih, (n, n)),
            (&self.w_hy, (y, n)),
        ];
        for (m, shape) in mats {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch {
                    op: "ModelParams::validate",
                    expected: shape.0 * shape.1,
                    found: m.rows() * m.cols(),
                });
            }
        }
        for b in [&self.b_i, &self.b_o, &self.b_f, &self.b_ci] {
            if b.dim() != n {
                return Err(Error::DimensionMismatch { op: "ModelParams::validate", expected: n, found: b.dim() });
            }
        }
        Ok(())
    }
}

/// Recurrent state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub s: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: Vector::zeros(hidden), s: Vector::zeros(hidden) }
    }
}

/// Everything one step computed, kept for BPTT and perturbation analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vector,
    pub prev: LstmState,
    pub net_i: Vector,
    pub net_o: Vector,
    pub net_f: Vector,
    pub net_ci: Vector,
    pub i: Vector,
    pub o: Vector,
    pub f: Vector,
    pub ci: Vector,
    /// `tanh(s)`
    pub co: Vector,
    pub s: Vector,
    pub h: Vector,
}

/// One input window and its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub inputs: Vec<Vector>,
    pub target: Vector,
}

impl Sequence {
    pub fn new(inputs: Vec<Vector>, target: Vector) -> Self {
        Sequence { inputs, target }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn affine(w_x: &Matrix, x: &Vector, w_h: &Matrix, h: &Vector, b: &Vector) -> Result<Vector> {
    let mut net = matvec(w_x, x)?;
    net.axpy(1.0, &matvec(w_h, h)?)?;
    net.axpy(1.0, b)?;
    Ok(net)
}

/// Advances the cell by one input.
pub fn cell_step(params: &ModelParams, x_t: &Vector, prev: &LstmState) -> Result<(LstmState, StepCache)> {
    let p = params;
    let net_i = affine(&p.w_ix, x_t, &p.w_ih, &prev.h, &p.b_i)?;
    let net_o = affine(&p.w_ox, x_t, &p.w_oh, &prev.h, &p.b_o)?;
    let net_f = affine(&p.w_fx, x_t, &p.w_fh, &prev.h, &p.b_f)?;
    let net_ci = affine(&p.w_cix, x_t, &p.w_cih, &prev.h, &p.b_ci)?;
    let i = net_i.map(sigmoid);
    let o = net_o.map(sigmoid);
    let f = net_f.map(sigmoid);
    let ci = net_ci.map(f64::tanh);
    let mut s = hadamard(&prev.s, &f)?;
    s.axpy(1.0, &hadamard(&i, &ci)?)?;
    let co = s.map(f64::tanh);
    let h = hadamard(&co, &o)?;
    let state = LstmState { h: h.clone(), s: s.clone() };
    let cache = StepCache { x: x_t.clone(), prev: prev.clone(), net_i, net_o, net_f, net_ci, i, o, f, ci, co, s, h };
    Ok((state, cache))
}

/// Dense sigmoid head `σ(W_hy h)`.
pub fn head(params: &ModelParams, h: &Vector) -> Result<Vector> {
    Ok(matvec(&params.w_hy, h)?.map(sigmoid))
}

/// Runs the whole window from the zero state and applies the head.
pub fn forward(params: &ModelParams, seq: &Sequence) -> Result<(Vector, Vec<StepCache>)> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = LstmState::zeros(params.dims.hidden);
    let mut caches = Vec::with_capacity(seq.len());
    for x in &seq.inputs {
        let (next, cache) = cell_step(params, x, &state)?;
        state = next;
        caches.push(cache);
    }
    let y = head(params, &state.h)?;
    Ok((y, caches))
}

/// Mean over output dimensions of the squared error.
pub fn mse(y: &Vector, target: &Vector) -> Result<f64> {
    Ok(y.dist_sq(target)? / y.dim() as f64)
}

/// Gradient of `mse(forward(params, seq), seq.target)` by backpropagation through time.
pub fn backward(params: &ModelParams, seq: &Sequence, caches: &[StepCache], y: &Vector) -> Result<ParamGrads> {
    if caches.len() != seq.len() || caches.is_empty() {
        return Err(Error::CacheMismatch(caches.len(), seq.len()));
    }
    let p = params;
    let mut g = ModelParams::zeros(p.dims);
    let n_out = y.dim() as f64;

    // head: dL/dz = 2(y - t)/Y ⊙ y(1 - y)
    let dz = Vector::new(
        y.iter()
            .zip(seq.target.iter())
            .map(|(&yk, &tk)| 2.0 * (yk - tk) / n_out * yk * (1.0 - yk))
            .collect(),
    );
    if dz.dim() != p.dims.output {
        return Err(Error::DimensionMismatch { op: "backward", expected: p.dims.output, found: dz.dim() });
    }
    let last = caches.last().expect("nonempty");
    g.w_hy.add_outer(&dz, &last.h)?;
    let mut dh = matvec_t(&p.w_hy, &dz)?;
    let mut ds_next = Vector::zeros(p.dims.hidden);

    for c in caches.iter().rev() {
        let n = c.h.dim();
        let mut d_net_i = Vector::zeros(n);
        let mut d_net_o = Vector::zeros(n);
        let mut d_net_f = Vector::zeros(n);
        let mut d_net_ci = Vector::zeros(n);
        let mut ds_prev = Vector::zeros(n);
        for k in 0..n {
            let d_o = dh[k] * c.co[k];
            let ds = ds_next[k] + dh[k] * c.o[k] * (1.0 - c.co[k] * c.co[k]);
            let d_f = ds * c.prev.s[k];
            let d_i = ds * c.ci[k];
            let d_ci = ds * c.i[k];
            ds_prev[k] = ds * c.f[k];
            d_net_o[k] = d_o * c.o[k] * (1.0 - c.o[k]);
            d_net_f[k] = d_f * c.f[k] * (1.0 - c.f[k]);
            d_net_i[k] = d_i * c.i[k] * (1.0 - c.i[k]);
            d_net_ci[k] = d_ci * (1.0 - c.ci[k] * c.ci[k]);
        }

        g.w_ix.add_outer(&d_net_i, &c.x)?;
        g.w_ox.add_outer(&d_net_o, &c.x)?;
        g.w_fx.add_outer(&d_net_f, &c.x)?;
        g.w_cix.add_outer(&d_net_ci, &c.x)?;
        g.w_ih.add_outer(&d_net_i, &c.prev.h)?;
        g.w_oh.add_outer(&d_net_o, &c.prev.h)?;
        g.w_fh.add_outer(&d_net_f, &c.prev.h)?;
        g.w_cih.add_outer(&d_net_ci, &c.prev.h)?;
        g.b_i.axpy(1.0, &d_net_i)?;
        g.b_o.axpy(1.0, &d_net_o)?;
        g.b_f.axpy(1.0, &d_net_f)?;
        g.b_ci.axpy(1.0, &d_net_ci)?;

        let mut dh_prev = matvec_t(&p.w_ih, &d_net_i)?;
        dh_prev.axpy(1.0, &matvec_t(&p.w_oh, &d_net_o)?)?;
        dh_prev.axpy(1.0, &matvec_t(&p.w_fh, &d_net_f)?)?;
        dh_prev.axpy(1.0, &matvec_t(&p.w_cih, &d_net_ci)?)?;
        dh = dh_prev;
        ds_next = ds_prev;
    }
    Ok(g)
}

/// Forward pass, loss, and gradient for one sequence.
pub fn loss_and_grad(params: &ModelParams, seq: &Sequence) -> Result<(f64, ParamGrads)> {
    let (y, caches) = forward(params, seq)?;
    let loss = mse(&y, &seq.target)?;
    let g = backward(params, seq, &caches, &y)?;
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    fn random_params(dims: Dims, seed: u64, scale: f64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(dims);
        for (_, t) in p.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
        p
    }

    fn random_seq(dims: Dims, len: usize, seed: u64) -> Sequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let inputs = (0..len)
            .map(|_| Vector::new((0..dims.input).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let target = Vector::new((0..dims.output).map(|_| rng.random_range(0.1..0.9)).collect());
        Sequence::new(inputs, target)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = ModelParams::zeros(Dims::new(3, 2, 1));
        let (state, cache) = cell_step(&p, &v(&[1.0, -2.0, 0.5]), &LstmState::zeros(2)).unwrap();
        assert_eq!(state.h, Vector::zeros(2));
        assert_eq!(state.s, Vector::zeros(2));
        assert_eq!(cache.i, v(&[0.5, 0.5]));
    }

    #[test]
    fn cell_input_bias_only() {
        let mut p = ModelParams::zeros(Dims::new(1, 1, 1));
        p.b_ci = v(&[1.0]);
        let (state, c) = cell_step(&p, &v(&[0.7]), &LstmState::zeros(1)).unwrap();
        assert!((c.ci[0] - 0.7615941559557649).abs() < 1e-15);
        assert_eq!((c.i[0], c.f[0], c.o[0]), (0.5, 0.5, 0.5));
        assert!((state.s[0] - 0.3807970779778824).abs() < 1e-15);
        assert!((state.h[0] - 0.18169974219452625).abs() < 1e-15);
    }

    #[test]
    fn forward_zero_params_outputs_half() {
        let dims = Dims::new(2, 3, 2);
        let (y, caches) = forward(&ModelParams::zeros(dims), &random_seq(dims, 4, 1)).unwrap();
        assert_eq!(y, v(&[0.5, 0.5]));
        assert_eq!(caches.len(), 4);
    }

    #[test]
    fn forward_single_step_is_cell_plus_head() {
        let dims = Dims::new(2, 3, 2);
        let p = random_params(dims, 3, 1.0);
        let seq = random_seq(dims, 1, 4);
        let (y, _) = forward(&p, &seq).unwrap();
        let (state, _) = cell_step(&p, &seq.inputs[0], &LstmState::zeros(3)).unwrap();
        assert_eq!(y, head(&p, &state.h).unwrap());
    }

    #[test]
    fn forward_rejects_empty_sequence() {
        let p = ModelParams::zeros(Dims::new(1, 1, 1));
        let seq = Sequence::new(vec![], v(&[0.5]));
        assert!(matches!(forward(&p, &seq), Err(Error::EmptySequence)));
    }

    #[test]
    fn cell_step_dimension_mismatch() {
        let p = ModelParams::zeros(Dims::new(2, 1, 1));
        assert!(cell_step(&p, &v(&[1.0]), &LstmState::zeros(1)).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&v(&[0.3, 0.2]), &v(&[0.3, 0.2])).unwrap(), 0.0);
        assert_eq!(mse(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.5);
        assert_eq!(mse(&v(&[0.5]), &v(&[0.25])).unwrap(), 0.0625);
        assert!(mse(&v(&[0.5]), &v(&[0.25, 0.1])).is_err());
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let dims = Dims::new(2, 3, 2);
        let p = random_params(dims, 5, 1.0);
        let mut seq = random_seq(dims, 3, 6);
        let (y, caches) = forward(&p, &seq).unwrap();
        seq.target = y.clone();
        let g = backward(&p, &seq, &caches, &y).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn backward_rejects_foreign_caches() {
        let dims = Dims::new(1, 1, 1);
        let p = random_params(dims, 1, 1.0);
        let seq = random_seq(dims, 3, 2);
        let (y, caches) = forward(&p, &seq).unwrap();
        assert!(matches!(backward(&p, &seq, &caches[..2], &y), Err(Error::CacheMismatch(2, 3))));
    }

    #[test]
    fn b_o_gradient_matches_hand_chain_rule() {
        // l = 1, N_h = 1: h = tanh(s)·σ(net_o), y = σ(w h), L = (y − t)²
        let p = random_params(Dims::new(1, 1, 1), 9, 1.0);
        let seq = Sequence::new(vec![v(&[0.4])], v(&[0.3]));
        let (y, caches) = forward(&p, &seq).unwrap();
        let g = backward(&p, &seq, &caches, &y).unwrap();

        let x = 0.4;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        // s_prev = 0, so the forget gate drops out
        let (wix, wox, wcix) = (p.w_ix.get(0, 0), p.w_ox.get(0, 0), p.w_cix.get(0, 0));
        let i = sig(wix * x + p.b_i[0]);
        let ci = (wcix * x + p.b_ci[0]).tanh();
        let s = i * ci;
        let net_o = wox * x + p.b_o[0];
        let o = sig(net_o);
        let h = s.tanh() * o;
        let w = p.w_hy.get(0, 0);
        let yy = sig(w * h);
        let expected = 2.0 * (yy - 0.3) * yy * (1.0 - yy) * w * s.tanh() * o * (1.0 - o);
        assert!((g.b_o[0] - expected).abs() < 1e-14, "{} vs {expected}", g.b_o[0]);
    }

    #[test]
    fn init_respects_output_gate_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let p = ModelParams::init_uniform(Dims::new(3, 16, 2), &mut rng);
            let n = linalg::spectral_norm(&p.w_oh, 10_000, 1e-14).value;
            assert!(BETA * n <= 0.9 + 1e-6);
            assert!(p.b_i.iter().all(|&b| b == 0.0));
            p.validate().unwrap();
        }
    }

    #[test]
    fn flat_round_trip() {
        let dims = Dims::new(2, 3, 1);
        let p = random_params(dims, 11, 1.0);
        let mut q = ModelParams::zeros(dims);
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[1.0]).is_err());
    }
}
