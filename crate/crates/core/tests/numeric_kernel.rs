// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use steerkit_core::linalg::{covariance, mean_center, min_singular_value, psd_eig, sym_eig, Matrix};
use steerkit_core::ErrorKind;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[path = "support/charpoly.rs"]
mod charpoly;
use charpoly::{fixtures, real_roots};

#[test]
fn sym_eig_matches_characteristic_polynomial_roots() {
    for a in fixtures() {
        let oracle = real_roots(&a);
        assert_eq!(oracle.len(), a.rows(), "oracle must isolate every root of {a:?}");
        let e = sym_eig(&a).unwrap();
        for (got, want) in e.eigenvalues.iter().zip(&oracle) {
            assert!(close(*got, *want, 1e-8), "eigenvalue {got} vs oracle {want} for {a:?}");
        }
    }
}

fn residual_ok(a: &Matrix) {
    let e = sym_eig(a).unwrap();
    let l1 = e.eigenvalues[0].abs().max(1.0);
    for i in 0..a.rows() {
        let v = e.vector(i);
        let av = a.matvec(&v).unwrap();
        let r: f64 = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - e.eigenvalues[i] * y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(r <= 1e-8 * l1, "‖Av − λv‖ = {r}");
    }
}

#[test]
fn eigenpairs_satisfy_definition_on_fixtures() {
    for a in fixtures() {
        residual_ok(&a);
    }
}

#[test]
fn diagonal_input_gives_signed_permutation() {
    let e = sym_eig(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
    assert_eq!(e.eigenvalues, vec![3.0, 2.0, 1.0]);
    let expect = [0usize, 2, 1];
    for (col, &axis) in expect.iter().enumerate() {
        let v = e.vector(col);
        for (i, x) in v.iter().enumerate() {
            if i == axis {
                assert!(close(x.abs(), 1.0, 1e-15));
            } else {
                assert_eq!(*x, 0.0);
            }
        }
    }
}

#[test]
fn two_by_two_example() {
    let e = sym_eig(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
    assert!(close(e.eigenvalues[0], 3.0, 1e-12));
    assert!(close(e.eigenvalues[1], 1.0, 1e-12));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v0 = e.vector(0);
    let v1 = e.vector(1);
    assert!(close((v0[0] * s + v0[1] * s).abs(), 1.0, 1e-12));
    assert!(close((v1[0] * s - v1[1] * s).abs(), 1.0, 1e-12));
}

#[test]
fn zero_matrix_has_zero_spectrum() {
    let e = sym_eig(&Matrix::zeros(4, 4)).unwrap();
    assert_eq!(e.eigenvalues, vec![0.0; 4]);
    let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors).unwrap();
    assert!(vtv.sub(&Matrix::identity(4)).unwrap().frobenius_norm() <= 1e-10);
}

#[test]
fn asymmetric_input_is_rejected() {
    let a = m(&[&[1.0, 2.0], &[2.0 + 1e-6, 1.0]]);
    assert_eq!(sym_eig(&a).unwrap_err().kind(), ErrorKind::InvalidInput);
    // within tolerance is accepted
    let b = m(&[&[1.0, 2.0], &[2.0 + 1e-9, 1.0]]);
    assert!(sym_eig(&b).is_ok());
}

#[test]
fn psd_eig_clamps_tiny_negatives() {
    // eigenvalues {1, −5e−11} → clamped to {1, 0}
    let lam = [1.0, -5e-11];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = m(&[&[s, s], &[s, -s]]);
    let a = q.matmul(&Matrix::diag(&lam)).unwrap().matmul(&q.transpose()).unwrap();
    let e = psd_eig(&a).unwrap();
    assert!(e.eigenvalues.iter().all(|&l| l >= 0.0));
    let a2 = q
        .matmul(&Matrix::diag(&[1.0, -1e-6]))
        .unwrap()
        .matmul(&q.transpose())
        .unwrap();
    assert_eq!(psd_eig(&a2).unwrap_err().kind(), ErrorKind::NumericalFailure);
}

#[test]
fn mean_center_examples() {
    let (c, mu) = mean_center(&m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    assert_eq!(c, m(&[&[-1.0, -1.0], &[1.0, 1.0]]));
    assert_eq!(mu, vec![2.0, 3.0]);
    let (c, mu) = mean_center(&m(&[&[5.0, 5.0]])).unwrap();
    assert_eq!(c, m(&[&[0.0, 0.0]]));
    assert_eq!(mu, vec![5.0, 5.0]);
    let (c, mu) = mean_center(&Matrix::zeros(3, 2)).unwrap();
    assert_eq!(c, Matrix::zeros(3, 2));
    assert_eq!(mu, vec![0.0, 0.0]);
    assert_eq!(
        mean_center(&Matrix::zeros(0, 2)).unwrap_err().kind(),
        ErrorKind::DegenerateInput
    );
}

#[test]
fn covariance_examples() {
    let c = covariance(&m(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 0.1], &[0.0, -0.1]])).unwrap();
    assert!(close(c.get(0, 0), 2.0 / 3.0, 1e-15));
    assert!(close(c.get(1, 1), 0.02 / 3.0, 1e-15));
    assert_eq!(c.get(0, 1), 0.0);
    assert_eq!(c.get(1, 0), 0.0);

    let c = covariance(&m(&[&[1.5, -2.0], &[1.5, -2.0]])).unwrap();
    assert_eq!(c, Matrix::zeros(2, 2));

    let c = covariance(&m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
    assert_eq!(c, m(&[&[0.5, -0.5], &[-0.5, 0.5]]));

    assert_eq!(
        covariance(&m(&[&[1.0, 2.0]])).unwrap_err().kind(),
        ErrorKind::DegenerateInput
    );
}

#[test]
fn min_singular_value_examples() {
    assert!(close(
        min_singular_value(&Matrix::diag(&[5.0, 2.0])).unwrap(),
        2.0,
        1e-12
    ));
    assert_eq!(min_singular_value(&Matrix::zeros(2, 2)).unwrap(), 0.0);
    // Gram of [[1,1],[0,1]] is [[1,1],[1,2]]: λ = (3 ± √5)/2
    let want = ((3.0 - 5f64.sqrt()) / 2.0).sqrt();
    let got = min_singular_value(&m(&[&[1.0, 1.0], &[0.0, 1.0]])).unwrap();
    assert!(close(got, want, 1e-12), "{got} vs {want}");
    // diag(2,…,2) output weights
    assert!(close(min_singular_value(&Matrix::diag(&[2.0; 6])).unwrap(), 2.0, 1e-12));
}

#[test]
fn min_singular_value_of_wide_and_tall_matrices_agree() {
    let a = m(&[&[1.0, 2.0, 0.0, -1.0], &[0.5, -1.0, 3.0, 0.0]]);
    let s1 = min_singular_value(&a).unwrap();
    let s2 = min_singular_value(&a.transpose()).unwrap();
    assert!(close(s1, s2, 1e-12));
    // inverse-norm identity for a square invertible matrix: σ_min = 1/‖W⁻¹‖₂
    let w = m(&[&[2.0, 1.0], &[1.0, 3.0]]);
    let det = 5.0;
    let inv = m(&[&[3.0 / det, -1.0 / det], &[-1.0 / det, 2.0 / det]]);
    let inv_norm = sym_eig(&inv.transpose().matmul(&inv).unwrap()).unwrap().eigenvalues[0].sqrt();
    assert!(close(min_singular_value(&w).unwrap(), 1.0 / inv_norm, 1e-12));
}

// ---------------------------------------------------------------------------
// properties

fn sym_strategy(max_d: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_d).prop_flat_map(|d| {
        proptest::collection::vec(-10.0f64..10.0, d * d).prop_map(move |v| {
            let a = Matrix::new(d, d, v).unwrap();
            // symmetrise exactly
            let mut s = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    s.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
                }
            }
            s
        })
    })
}

fn psd_strategy(max_d: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_d, 1usize..80).prop_flat_map(|(d, n)| {
        proptest::collection::vec(-3.0f64..3.0, d * n).prop_map(move |v| {
            let x = Matrix::new(n, d, v).unwrap();
            x.transpose().matmul(&x).unwrap().scale(1.0 / n as f64)
        })
    })
}

fn reconstruct(a: &Matrix) -> Matrix {
    let e = sym_eig(a).unwrap();
    let v = &e.eigenvectors;
    v.matmul(&Matrix::diag(&e.eigenvalues))
        .unwrap()
        .matmul(&v.transpose())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reconstruction_up_to_d64(a in psd_strategy(64)) {
        let r = reconstruct(&a);
        let err = r.sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-8 * a.frobenius_norm().max(f64::MIN_POSITIVE), "err {err}");
    }

    #[test]
    fn trace_is_preserved(a in sym_strategy(24)) {
        let e = sym_eig(&a).unwrap();
        let s: f64 = e.eigenvalues.iter().sum();
        let t = a.trace();
        let scale = a.frobenius_norm().max(1.0);
        prop_assert!((s - t).abs() <= 1e-9 * scale, "{s} vs {t}");
    }

    #[test]
    fn eigenvectors_orthonormal_and_sorted(a in sym_strategy(24)) {
        let e = sym_eig(&a).unwrap();
        let d = a.rows();
        let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors).unwrap();
        prop_assert!(vtv.sub(&Matrix::identity(d)).unwrap().frobenius_norm() <= 1e-10);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_residuals_small(a in sym_strategy(16)) {
        residual_ok(&a);
    }

    #[test]
    fn covariance_is_symmetric_psd(rows in 2usize..40, d in 1usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = Matrix::new(rows, d, data).unwrap();
        let c = covariance(&x).unwrap();
        prop_assert!(c.sub(&c.transpose()).unwrap().frobenius_norm() <= 1e-12);
        let e = sym_eig(&c).unwrap();
        prop_assert!(e.eigenvalues.iter().all(|&l| l >= -1e-10));
        let (centered, _) = mean_center(&x).unwrap();
        for j in 0..d {
            let s: f64 = (0..rows).map(|i| centered.get(i, j)).sum::<f64>() / rows as f64;
            prop_assert!(s.abs() <= 1e-12);
        }
    }
}
