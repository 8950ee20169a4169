// SPDX-License-Identifier: MIT OR Apache-2.0

//! Characteristic-polynomial eigenvalue oracle and its fixed fixtures,
//! shared by the kernel tests and the acceptance run.

use steerkit_core::linalg::Matrix;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// Coefficients `c` of `det(λI − A) = λⁿ + c[1] λⁿ⁻¹ + … + c[n]` by
/// Faddeev–LeVerrier.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut mk = Matrix::zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k−1} + c_{k−1} I
        let mut next = a.matmul(&mk).unwrap();
        for i in 0..n {
            next.set(i, i, next.get(i, i) + c[k - 1]);
        }
        mk = next;
        let amk = a.matmul(&mk).unwrap();
        c[k] = -amk.trace() / k as f64;
    }
    c
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().fold(0.0, |acc, &ci| acc * x + ci)
}

/// All real roots of a real-rooted polynomial with simple roots, by dense
/// sign-change scanning over the Gershgorin interval and bisection.
pub fn real_roots(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let c = char_poly(a);
    let mut r = 0.0f64;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum();
        r = r.max(a.get(i, i).abs() + off);
    }
    let (lo, hi) = (-r - 1.0, r + 1.0);
    let steps = 400_000;
    let h = (hi - lo) / steps as f64;
    let mut roots = Vec::new();
    let mut x0 = lo;
    let mut f0 = horner(&c, x0);
    for s in 1..=steps {
        let x1 = lo + s as f64 * h;
        let f1 = horner(&c, x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut a0, mut b0, mut fa) = (x0, x1, f0);
            for _ in 0..200 {
                let mid = 0.5 * (a0 + b0);
                let fm = horner(&c, mid);
                if fm == 0.0 {
                    a0 = mid;
                    b0 = mid;
                    break;
                }
                if fa * fm < 0.0 {
                    b0 = mid;
                } else {
                    a0 = mid;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a0 + b0));
        }
        x0 = x1;
        f0 = f1;
    }
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    roots
}

/// Fixed symmetric fixtures with well-separated eigenvalues, d = 1..6.
pub fn fixtures() -> Vec<Matrix> {
    vec![
        m(&[&[4.0]]),
        m(&[&[2.0, 1.0], &[1.0, 2.0]]),
        m(&[&[3.0, -1.0], &[-1.0, 0.5]]),
        m(&[&[2.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 2.0]]),
        m(&[&[1.0, 0.5, 0.25], &[0.5, -2.0, 0.75], &[0.25, 0.75, 3.0]]),
        m(&[
            &[4.0, 1.0, -2.0, 2.0],
            &[1.0, 2.0, 0.0, 1.0],
            &[-2.0, 0.0, 3.0, -2.0],
            &[2.0, 1.0, -2.0, -1.0],
        ]),
        m(&[
            &[5.0, 0.3, 0.1, -0.4, 0.2],
            &[0.3, 3.5, 0.6, 0.0, -0.1],
            &[0.1, 0.6, 1.0, 0.2, 0.0],
            &[-0.4, 0.0, 0.2, -1.5, 0.7],
            &[0.2, -0.1, 0.0, 0.7, -3.0],
        ]),
        m(&[
            &[6.0, 1.0, 0.0, 0.5, 0.0, 0.2],
            &[1.0, 4.0, 0.8, 0.0, 0.1, 0.0],
            &[0.0, 0.8, 2.0, 0.3, 0.0, 0.4],
            &[0.5, 0.0, 0.3, 0.0, 0.9, 0.0],
            &[0.0, 0.1, 0.0, 0.9, -2.0, 0.6],
            &[0.2, 0.0, 0.4, 0.0, 0.6, -4.0],
        ]),
    ]
}
