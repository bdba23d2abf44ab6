//! Randomized checks of the per-step perturbation inequalities.

use lstm_tikhonov::lstm::cell_step;
use lstm_tikhonov::perturb::{
    check_h_step_invariant, check_hadamard_invariant, check_output_layer_invariant, random_feasible_params,
    run_perturbation_experiment,
};
use lstm_tikhonov::{Dims, LstmState, Matrix, ModelParams, RegConfig, Sequence, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 10_000;

fn uniform_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::new((0..n).map(|_| rng.random_range(-5.0..=5.0)).collect())
}

fn uniform_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-5.0..=5.0)).collect()).unwrap()
}

/// Half of the cases use tiny perturbations, where the ratio is closest to 1.
fn nearby(v: &Vector, rng: &mut ChaCha8Rng) -> Vector {
    if rng.random_bool(0.5) {
        uniform_vec(v.dim(), rng)
    } else {
        let eps = 10f64.powf(rng.random_range(-6.0..-1.0));
        v.map(|x| x + eps * rng.random_range(-1.0..=1.0))
    }
}

#[test]
fn hadamard_inequality_never_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let n = rng.random_range(1..=6);
        let a = uniform_vec(n, &mut rng);
        let b = uniform_vec(n, &mut rng);
        let (a_hat, b_hat) = (nearby(&a, &mut rng), nearby(&b, &mut rng));
        let c = check_hadamard_invariant(&a, &b, &a_hat, &b_hat).unwrap();
        assert!(c.ok, "{c:?}");
        if c.rhs > 0.0 {
            worst = worst.max(c.lhs / c.rhs);
        }
    }
    assert!(worst <= 1.0);
}

#[test]
fn output_layer_inequality_never_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..CASES {
        let (y, n) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let w = uniform_matrix(y, n, &mut rng);
        let h = uniform_vec(n, &mut rng);
        let h_hat = nearby(&h, &mut rng);
        let c = check_output_layer_invariant(&w, &h, &h_hat).unwrap();
        assert!(c.ok, "{c:?}");
    }
}

#[test]
fn h_step_inequality_never_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..CASES {
        let dims = Dims::new(rng.random_range(1..=3), rng.random_range(1..=4), 1);
        let mut p = ModelParams::zeros(dims);
        let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-5.0..=5.0)).collect();
        p.set_flat(&flat).unwrap();
        let x = uniform_vec(dims.input, &mut rng);
        let prev = LstmState { h: uniform_vec(dims.hidden, &mut rng).map(f64::tanh), s: uniform_vec(dims.hidden, &mut rng) };
        let prev_hat = LstmState { h: nearby(&prev.h, &mut rng).map(|v| v.clamp(-1.0, 1.0)), s: nearby(&prev.s, &mut rng) };
        let x_hat = nearby(&x, &mut rng);
        let (_, clean) = cell_step(&p, &x, &prev).unwrap();
        let (_, noisy) = cell_step(&p, &x_hat, &prev_hat).unwrap();
        let c = check_h_step_invariant(&clean, &noisy).unwrap();
        assert!(c.ok && c.rhs <= c.rhs_beta_sq, "{c:?}");
    }
}

#[test]
fn experiments_report_no_step_violations() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let config = RegConfig::default();
    for model in 0..20 {
        let dims = Dims::new(3, 4, 2);
        let p = if model % 2 == 0 {
            random_feasible_params(dims, 0.5, 0.9, &mut rng)
        } else {
            // outside the feasible region the step checks still apply
            let mut q = ModelParams::zeros(dims);
            let flat: Vec<f64> = (0..q.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
            q.set_flat(&flat).unwrap();
            q
        };
        let seqs: Vec<Sequence> = (0..4)
            .map(|_| {
                let len = rng.random_range(1..=20);
                Sequence::new((0..len).map(|_| uniform_vec(3, &mut rng)).collect(), Vector::filled(2, 0.5))
            })
            .collect();
        for sigma in [1e-3, 0.1, 1.0] {
            let r = run_perturbation_experiment(&p, &seqs, sigma, 8, model as u64, &config).unwrap();
            assert_eq!(r.step_violations, 0, "model {model} sigma {sigma}");
        }
    }
}
