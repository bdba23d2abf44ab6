//! Small dense linear algebra over `f64`.
//!
//! Only what the LSTM and the regularizer need: row-major matrices, vectors,
//! elementwise products, and matrix norms together with their (sub)gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dims("dot", self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// `‖self − other‖²`.
    pub fn dist_sq(&self, other: &Vector) -> Result<f64> {
        check_dims("dist_sq", self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn scale(&self, c: f64) -> Vector {
        self.map(|x| c * x)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Vector) -> Result<()> {
        check_dims("axpy", self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    fn zip_with(&self, op: &'static str, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        check_dims(op, self.dim(), other.dim())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect()))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| c * x).collect() }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "Matrix::axpy",
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &Vector, b: &Vector) -> Result<()> {
        check_dims("add_outer(rows)", self.rows, a.dim())?;
        check_dims("add_outer(cols)", self.cols, b.dim())?;
        for (r, &ar) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, &bc) in row.iter_mut().zip(b.iter()) {
                *x += ar * bc;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn check_dims(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { op, expected, found });
    }
    Ok(())
}

/// `W v`
pub fn matvec(w: &Matrix, v: &Vector) -> Result<Vector> {
    check_dims("matvec", w.cols, v.dim())?;
    Ok(Vector(
        (0..w.rows)
            .map(|r| w.row(r).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
            .collect(),
    ))
}

/// `Wᵀ v`
pub fn matvec_t(w: &Matrix, v: &Vector) -> Result<Vector> {
    check_dims("matvec_t", w.rows, v.dim())?;
    let mut out = vec![0.0; w.cols];
    for (r, &vr) in v.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(w.row(r)) {
            *o += x * vr;
        }
    }
    Ok(Vector(out))
}

/// Elementwise product `a ⊙ b`.
pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    a.zip_with("hadamard", b, |x, y| x * y)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub fn tanh_prime(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

/// Which matrix norm the regularizer uses for `‖W‖`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    Spectral,
    Frobenius,
}

/// Stopping rule for power iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerIteration {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration { max_iters: 100, tol: 1e-9 }
    }
}

/// Result of [`spectral_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    /// Unit left singular vector (dimension `rows`).
    pub u: Vector,
    /// Unit right singular vector (dimension `cols`).
    pub v: Vector,
    /// Set for the zero matrix, where `u`, `v` are the first canonical basis vectors.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Starts from the normalized all-ones vector. The value estimate is the
/// Rayleigh quotient `‖W v‖`, and iteration stops once two successive
/// estimates differ by less than `tol` or after `max_iters` steps.
pub fn spectral_norm(w: &Matrix, max_iters: usize, tol: f64) -> SpectralNorm {
    power_iterate(w, max_iters, tol, false)
}

/// Like [`spectral_norm`] but stops when `v` moves by less than `tol`.
///
/// The value error is roughly the square of the vector error, so stopping on
/// the value leaves `u`, `v` visibly unconverged. Gradients use this variant.
pub fn spectral_pair(w: &Matrix, max_iters: usize, tol: f64) -> SpectralNorm {
    power_iterate(w, max_iters, tol, true)
}

fn power_iterate(w: &Matrix, max_iters: usize, tol: f64, stop_on_vector: bool) -> SpectralNorm {
    let (rows, cols) = w.shape();
    let basis = |n: usize| {
        let mut e = Vector::zeros(n);
        if n > 0 {
            e[0] = 1.0;
        }
        e
    };
    if w.is_zero() || rows == 0 || cols == 0 {
        return SpectralNorm { value: 0.0, u: basis(rows), v: basis(cols), degenerate: true, iterations: 0 };
    }

    let mut v = Vector::filled(cols, 1.0 / (cols as f64).sqrt());
    let mut wv = matvec(w, &v).expect("shape");
    let mut value = wv.norm();
    let mut iterations = 0;
    for it in 1..=max_iters.max(1) {
        iterations = it;
        // All-ones can be orthogonal to the top right singular vector, or even
        // lie in the null space; fall back to a different deterministic start.
        let mut next = matvec_t(w, &wv).expect("shape");
        let mut n = next.norm();
        if n == 0.0 {
            next = Vector::new((0..cols).map(|i| 1.0 + i as f64).collect());
            n = next.norm();
        }
        let next = next.scale(1.0 / n);
        let moved = next.dist_sq(&v).expect("shape").sqrt();
        v = next;
        wv = matvec(w, &v).expect("shape");
        let next_value = wv.norm();
        let delta = if stop_on_vector { moved } else { (next_value - value).abs() };
        value = next_value;
        if delta < tol {
            break;
        }
    }

    let u = if value > 0.0 { wv.scale(1.0 / value) } else { basis(rows) };
    SpectralNorm { value, u, v, degenerate: false, iterations }
}

/// `spectral_norm` with the default stopping rule.
pub fn spectral_norm_default(w: &Matrix) -> SpectralNorm {
    let p = PowerIteration::default();
    spectral_norm(w, p.max_iters, p.tol)
}

/// Gradient `u₁v₁ᵀ` of the spectral norm. Zero for the zero matrix.
///
/// When the top singular value is repeated this is still a valid subgradient.
pub fn spectral_norm_grad(w: &Matrix) -> Matrix {
    spectral_norm_grad_with(w, PowerIteration::default())
}

pub fn spectral_norm_grad_with(w: &Matrix, power: PowerIteration) -> Matrix {
    let sn = spectral_pair(w, power.max_iters, power.tol);
    outer_or_zero(w, &sn)
}

fn outer_or_zero(w: &Matrix, sn: &SpectralNorm) -> Matrix {
    let mut g = Matrix::zeros(w.rows, w.cols);
    if !sn.degenerate {
        g.add_outer(&sn.u, &sn.v).expect("shape");
    }
    g
}

/// `sqrt(Σ w_ij²)`
pub fn frobenius_norm(w: &Matrix) -> f64 {
    w.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm value and gradient under the chosen mode.
pub fn matrix_norm_with_grad(w: &Matrix, mode: NormMode, power: PowerIteration) -> (f64, Matrix) {
    match mode {
        NormMode::Spectral => {
            let sn = spectral_pair(w, power.max_iters, power.tol);
            (sn.value, outer_or_zero(w, &sn))
        }
        NormMode::Frobenius => {
            let f = frobenius_norm(w);
            let g = if f > 0.0 { w.scale(1.0 / f) } else { Matrix::zeros(w.rows, w.cols) };
            (f, g)
        }
    }
}

pub fn matrix_norm(w: &Matrix, mode: NormMode, power: PowerIteration) -> f64 {
    match mode {
        NormMode::Spectral => spectral_norm(w, power.max_iters, power.tol).value,
        NormMode::Frobenius => frobenius_norm(w),
    }
}


/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, unordered.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// `WᵀW`
pub fn gram(w: &Matrix) -> Matrix {
    let wt = w.transpose();
    let mut g = Matrix::zeros(w.cols(), w.cols());
    for i in 0..w.cols() {
        for j in 0..w.cols() {
            let s: f64 = wt.row(i).iter().zip(wt.row(j)).map(|(a, b)| a * b).sum();
            g.set(i, j, s);
        }
    }
    g
}

/// All singular values in descending order, from the eigenvalues of `WᵀW`.
///
/// Independent of power iteration; meant for diagnostics and test oracles.
pub fn singular_values(w: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = jacobi_eigenvalues(&gram(w)).into_iter().map(|e| e.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `σ₁ − σ₂`, or `+∞` for a matrix with a single column.
pub fn singular_gap(w: &Matrix) -> f64 {
    let s = singular_values(w);
    if s.len() < 2 {
        f64::INFINITY
    } else {
        s[0] - s[1]
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(matvec(&Matrix::identity(2), &v(&[3.0, -1.0])).unwrap(), v(&[3.0, -1.0]));
        assert_eq!(matvec(&Matrix::zeros(2, 2), &v(&[5.0, 7.0])).unwrap(), v(&[0.0, 0.0]));
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matvec(&w, &v(&[1.0, 1.0])).unwrap(), v(&[3.0, 7.0]));
        assert!(matches!(
            matvec(&w, &v(&[1.0])),
            Err(Error::DimensionMismatch { op: "matvec", .. })
        ));
    }

    #[test]
    fn hadamard_examples() {
        let x = v(&[0.3, -2.5]);
        assert_eq!(hadamard(&v(&[1.0, 1.0]), &x).unwrap(), x);
        assert_eq!(hadamard(&v(&[0.0, 0.0]), &x).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(hadamard(&v(&[2.0, -3.0]), &v(&[4.0, 5.0])).unwrap(), v(&[8.0, -15.0]));
        assert!(hadamard(&v(&[1.0]), &x).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm_default(&Matrix::identity(3)).value - 1.0).abs() < 1e-12);
        assert!((spectral_norm_default(&Matrix::diag(&[3.0, -5.0])).value - 5.0).abs() < 1e-9);
        let zero = spectral_norm_default(&Matrix::zeros(2, 3));
        assert!(zero.degenerate);
        assert_eq!(zero.value, 0.0);
        assert_eq!(zero.u, v(&[1.0, 0.0]));
        assert_eq!(zero.v, v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        for seed in 0..20 {
            let w = lcg_matrix(4, 3, seed);
            let oracle = jacobi_eigenvalues(&gram(&w)).into_iter().fold(0.0f64, f64::max).sqrt();
            let got = spectral_norm_default(&w).value;
            assert!((got - oracle).abs() < 1e-8, "seed {seed}: {got} vs {oracle}");
        }
    }

    #[test]
    fn start_vector_in_null_space() {
        // all-ones lies in the null space of this matrix
        let w = Matrix::from_rows(&[&[1.0, -1.0], &[2.0, -2.0]]);
        let sn = spectral_norm_default(&w);
        assert!((sn.value - 10f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_grad_examples() {
        let tight = PowerIteration { max_iters: 10_000, tol: 1e-15 };
        let g = spectral_norm_grad_with(&Matrix::diag(&[3.0, -5.0]), tight);
        let expected = [0.0, 0.0, 0.0, -1.0];
        for (a, b) in g.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{g:?}");
        }
        // the default rule stops on the value, so the vectors are looser
        let g = spectral_norm_grad(&Matrix::diag(&[3.0, -5.0]));
        for (a, b) in g.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{g:?}");
        }
        let g = spectral_norm_grad(&Matrix::from_rows(&[&[2.0]]));
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(spectral_norm_grad(&Matrix::zeros(2, 2)).is_zero());
    }

    #[test]
    fn spectral_norm_grad_matches_finite_differences() {
        let tight = PowerIteration { max_iters: 10_000, tol: 1e-15 };
        let h = 1e-6;
        let mut checked = 0;
        for seed in 100..160 {
            let w = lcg_matrix(3, 3, seed);
            let svals: Vec<f64> = {
                let mut e = jacobi_eigenvalues(&gram(&w));
                e.sort_by(|a, b| b.partial_cmp(a).unwrap());
                e.into_iter().map(|x| x.max(0.0).sqrt()).collect()
            };
            if svals[0] - svals[1] < 1e-2 {
                continue;
            }
            checked += 1;
            let g = spectral_norm_grad_with(&w, tight);
            for k in 0..9 {
                let mut plus = w.clone();
                plus.as_mut_slice()[k] += h;
                let mut minus = w.clone();
                minus.as_mut_slice()[k] -= h;
                let fd = (spectral_norm(&plus, tight.max_iters, tight.tol).value
                    - spectral_norm(&minus, tight.max_iters, tight.tol).value)
                    / (2.0 * h);
                let an = g.as_slice()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-5 || (fd - an).abs() < 1e-8, "seed {seed} k {k}: {an} vs {fd}");
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert!((frobenius_norm(&Matrix::identity(2)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[&[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn frobenius_grad_is_normalized_matrix() {
        let w = Matrix::from_rows(&[&[3.0, 4.0]]);
        let (n, g) = matrix_norm_with_grad(&w, NormMode::Frobenius, PowerIteration::default());
        assert_eq!(n, 5.0);
        assert!((g.get(0, 0) - 0.6).abs() < 1e-15 && (g.get(0, 1) - 0.8).abs() < 1e-15);
    }

    fn arb_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn spectral_below_frobenius(w in arb_matrix()) {
            prop_assert!(spectral_norm_default(&w).value <= frobenius_norm(&w) + 1e-8);
        }

        #[test]
        fn operator_bound(w in arb_matrix(), seed in 0u64..1000) {
            let x = Vector::new((0..w.cols()).map(|i| ((seed + i as u64) as f64 * 0.37).sin()).collect());
            let wx = matvec(&w, &x).unwrap();
            let tight = spectral_norm(&w, 10_000, 1e-14).value;
            prop_assert!(wx.norm() <= tight * x.norm() + 1e-8);
        }

        #[test]
        fn absolutely_homogeneous(w in arb_matrix(), c in -4.0f64..4.0) {
            let a = spectral_norm(&w.scale(c), 10_000, 1e-14).value;
            let b = c.abs() * spectral_norm(&w, 10_000, 1e-14).value;
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b));
        }
    }
}
