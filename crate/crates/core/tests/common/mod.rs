//! Helpers shared by the integration test targets. Each target uses a
//! different subset, hence the `dead_code` allowance.
#![allow(dead_code)]

use fsst_core::matrix::{correlation_of, CorrelationMatrix};
use fsst_core::neural::{Bound, ParamStore, Tape, Tensor};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Correlation of `t` draws of `n` series sharing one latent factor with
/// loading `loading`.
pub fn factor_correlation(n: usize, t: usize, loading: f64, seed: u64) -> CorrelationMatrix {
    let mut r = rng(seed);
    let common = gaussian(t, 1, &mut r);
    let noise = gaussian(t, n, &mut r);
    let data = Array2::from_shape_fn((t, n), |(i, j)| loading * common[[i, 0]] + noise[[i, j]]);
    correlation_of(data.view())
}

pub fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Eigenvalues from nalgebra's symmetric eigensolver, ascending.
pub fn eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = to_nalgebra(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest entrywise relative error between tape gradients and five-point
/// central differences of `loss` over every parameter of `store`.
///
/// The error of one entry is `|a − n| / max(|a|, |n|)`, or the absolute
/// difference when both are below 1e-7.
pub fn gradient_check<F>(store: &ParamStore, loss: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Tensor,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let l = loss(&mut tape, &bound);
    tape.backward(l).expect("backward");
    let analytic = bound.grads(&tape);

    let value = |s: &ParamStore| {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        let l = loss(&mut tape, &bound);
        tape.value(l)[[0, 0]]
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for (k, id) in store.ids().enumerate() {
        let (rows, cols) = store.get(id).dim();
        for i in 0..rows {
            for j in 0..cols {
                let x = store.get(id)[[i, j]];
                let mut at = |dx: f64| {
                    probe.get_mut(id)[[i, j]] = x + dx;
                    value(&probe)
                };
                let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                probe.get_mut(id)[[i, j]] = x;
                let a = analytic[k][[i, j]];
                let scale = a.abs().max(numeric.abs());
                let err = if scale < 1e-7 {
                    (a - numeric).abs()
                } else {
                    (a - numeric).abs() / scale
                };
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// Graphical lasso objective evaluated with nalgebra, `+∞` outside the PD
/// cone.
pub fn oracle_objective(s: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let Some(chol) = theta.clone().cholesky() else {
        return f64::INFINITY;
    };
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = theta.nrows();
    let mut l1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                l1 += theta[(i, j)].abs();
            }
        }
    }
    -log_det + s.component_mul(theta).sum() + lambda * l1
}

/// Coarse-to-fine grid search over the three free entries of a 2×2 precision.
pub fn brute_force_2x2(s: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut center = [1.0, 0.0, 1.0];
    let mut half = [5.0, 5.0, 5.0];
    let mut best = f64::INFINITY;
    let steps = 20;
    for _ in 0..80 {
        let mut best_point = center;
        for a in 0..=steps {
            for b in 0..=steps {
                for c in 0..=steps {
                    let p = [
                        center[0] - half[0] + 2.0 * half[0] * a as f64 / steps as f64,
                        center[1] - half[1] + 2.0 * half[1] * b as f64 / steps as f64,
                        center[2] - half[2] + 2.0 * half[2] * c as f64 / steps as f64,
                    ];
                    let theta = DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]]);
                    let f = oracle_objective(s, &theta, lambda);
                    if f < best {
                        best = f;
                        best_point = p;
                    }
                }
            }
        }
        center = best_point;
        for h in &mut half {
            *h *= 0.5;
        }
    }
    best
}

/// Proximal gradient descent with backtracking: gradient step on the smooth
/// part, soft-threshold of the off-diagonal entries.
pub fn proximal_oracle(s: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = s.nrows();
    let mut theta = DMatrix::from_diagonal(&s.diagonal().map(|d| 1.0 / d));
    let smooth = |t: &DMatrix<f64>| oracle_objective(s, t, 0.0);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let grad = s - theta.clone().try_inverse().expect("iterates stay PD");
        let f0 = smooth(&theta);
        loop {
            let mut next = &theta - &grad * step;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let v = next[(i, j)];
                        next[(i, j)] = v.signum() * (v.abs() - step * lambda).max(0.0);
                    }
                }
            }
            let diff = &next - &theta;
            let f1 = smooth(&next);
            let model = f0 + grad.component_mul(&diff).sum() + diff.norm_squared() / (2.0 * step);
            if f1.is_finite() && f1 <= model + 1e-15 {
                let moved = diff.amax();
                theta = next;
                step *= 1.2;
                if moved < 1e-13 {
                    return oracle_objective(s, &theta, lambda);
                }
                break;
            }
            step *= 0.5;
        }
    }
    oracle_objective(s, &theta, lambda)
}
