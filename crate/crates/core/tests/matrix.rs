mod common;

use common::{eigenvalues, factor_correlation, gaussian, rng, to_nalgebra};
use fsst_core::filtering::shrunk_correlation;
use fsst_core::matrix::{correlation_of, invert_spd, is_positive_definite, CorrelationMatrix};
use ndarray::Array2;
use proptest::prelude::*;

/// Random SPD matrix `A Aᵀ + εI` of size `n`.
fn spd(n: usize, seed: u64) -> Array2<f64> {
    let a = gaussian(n, n, &mut rng(seed));
    a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_round_trip(n in 1usize..12, seed in any::<u64>()) {
        let m = spd(n, seed);
        let inv = invert_spd(&m).unwrap();
        let product = m.dot(&inv);
        let identity = Array2::<f64>::eye(n);
        // scale-aware: condition numbers of A Aᵀ + 0.1 I stay moderate
        let worst = (&product - &identity).iter().fold(0.0f64, |w, v| w.max(v.abs()));
        prop_assert!(worst < 1e-8, "max |M M⁻¹ − I| = {worst:e}");
        let reference = to_nalgebra(&m).try_inverse().unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((inv[[i, j]] - reference[(i, j)]).abs() <= 1e-8 * (1.0 + reference[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn correlation_invariants(t in 3usize..60, n in 1usize..10, seed in any::<u64>()) {
        let data = gaussian(t, n, &mut rng(seed));
        let c = correlation_of(data.view());
        let e = c.entries();
        for i in 0..n {
            prop_assert_eq!(e[[i, i]], 1.0);
            for j in 0..n {
                prop_assert_eq!(e[[i, j]], e[[j, i]]);
                prop_assert!(e[[i, j]].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn definiteness_agrees_with_eigenvalues(n in 2usize..8, seed in any::<u64>(), shift in -3.0f64..3.0) {
        let base = gaussian(n, n, &mut rng(seed));
        let m = (&base + &base.t()) * 0.5 + Array2::<f64>::eye(n) * shift;
        let smallest = eigenvalues(&m)[0];
        // skip the numerically ambiguous band around zero
        prop_assume!(smallest.abs() > 1e-9);
        prop_assert_eq!(is_positive_definite(&m).unwrap(), smallest > 0.0);
    }

    #[test]
    fn shrinkage_shifts_eigenvalues(n in 2usize..9, seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let c = factor_correlation(n, 40, 0.8, seed);
        let shrunk = shrunk_correlation(&c, alpha).unwrap();
        // (1−α)C + αI has eigenvalues (1−α)λ + α
        let expected: Vec<f64> = eigenvalues(c.entries()).iter().map(|l| (1.0 - alpha) * l + alpha).collect();
        let got = eigenvalues(shrunk.entries());
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
        for i in 0..n {
            prop_assert_eq!(shrunk.entries()[[i, i]], 1.0);
        }
    }
}

#[test]
fn shrinkage_endpoints() {
    let c = factor_correlation(6, 50, 1.0, 3);
    assert_eq!(shrunk_correlation(&c, 0.0).unwrap(), c);
    assert_eq!(shrunk_correlation(&c, 1.0).unwrap(), CorrelationMatrix::identity(6));
}
