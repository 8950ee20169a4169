// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense 64-bit linear algebra: the handful of kernels the rest of the
//! toolkit needs (centering, covariance, a cyclic Jacobi eigensolver and the
//! smallest singular value).
//!
//! Everything here is deliberately small and dependency-free so that the
//! numerical behaviour (tolerances, tie handling, clamping) is fully specified
//! by this file.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius tolerance for the Jacobi sweeps, relative to
/// `max(1, ‖C‖_F)`.
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of full cyclic sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Maximum tolerated asymmetry `|c_ij − c_ji|` for [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Negative eigenvalues of a covariance down to this value are clamped to 0.
pub const PSD_CLAMP: f64 = 1e-10;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wrap `data` (row-major) as a `rows × cols` matrix.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
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

    /// Build from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    /// Build a `rows × cols` matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, cols: &[C]) -> Result<Self> {
        let mut m = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::InvalidInput(format!(
                    "column {j} has {} rows, expected {rows}",
                    c.len()
                )));
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::InvalidInput(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::InvalidInput(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rows != x.len() {
            return Err(Error::InvalidInput(format!(
                "cannot apply transpose of {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidInput("shape mismatch in subtraction".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn require_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite values")))
    }
}

/// Subtract the per-column mean from every row.
///
/// Returns the centered matrix and the mean vector.
pub fn mean_center(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if a.rows == 0 {
        return Err(Error::DegenerateInput("cannot center an empty matrix".into()));
    }
    require_finite(a, "input")?;
    let n = a.rows as f64;
    let mut mean = vec![0.0; a.cols];
    for i in 0..a.rows {
        for (m, &v) in mean.iter_mut().zip(a.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut c = a.clone();
    for i in 0..c.rows {
        let cols = c.cols;
        for (v, &m) in c.data[i * cols..(i + 1) * cols].iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Ok((c, mean))
}

/// Sample covariance `1/(N−1) · XcᵀXc` with samples as rows.
pub fn covariance(a: &Matrix) -> Result<Matrix> {
    if a.rows < 2 {
        return Err(Error::DegenerateInput(format!(
            "covariance needs at least 2 rows, got {}",
            a.rows
        )));
    }
    let (xc, _) = mean_center(a)?;
    let d = a.cols;
    let mut c = Matrix::zeros(d, d);
    for r in 0..xc.rows {
        let row = xc.row(r);
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let crow = &mut c.data[i * d..(i + 1) * d];
            for j in i..d {
                crow[j] += ri * row[j];
            }
        }
    }
    let denom = (a.rows - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = c.data[i * d + j] / denom;
            c.data[i * d + j] = v;
            c.data[j * d + i] = v;
        }
    }
    Ok(c)
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// The `i`-th eigenvector as an owned vector.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps visit every `(p, q)` pair with `p < q` in row order and stop once
/// the off-diagonal Frobenius norm falls below `JACOBI_TOL · max(1, ‖C‖_F)`.
/// Eigenpairs are returned sorted by descending eigenvalue; equal eigenvalues
/// keep their diagonal (Jacobi column) order because the sort is stable.
///
/// # Errors
///
/// * [`Error::InvalidInput`] if the matrix is empty, not square, non-finite or
///   asymmetric beyond [`SYMMETRY_TOL`].
/// * [`Error::NumericalFailure`] if the sweeps do not converge within
///   [`JACOBI_MAX_SWEEPS`].
pub fn sym_eig(c: &Matrix) -> Result<EigenDecomposition> {
    let n = c.rows;
    if n == 0 || !c.is_square() {
        return Err(Error::InvalidInput(format!(
            "sym_eig needs a non-empty square matrix, got {}x{}",
            c.rows, c.cols
        )));
    }
    require_finite(c, "matrix")?;
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((c.get(i, j) - c.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max |c_ij - c_ji| = {asym:.3e})"
        )));
    }

    // Work on the symmetrised copy so tiny asymmetries cannot bias the result.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (c.get(i, j) + c.get(j, i));
        }
    }
    let mut v = Matrix::identity(n).data;
    let scale = c.frobenius_norm().max(1.0);
    let tol = JACOBI_TOL * scale;

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&a) <= tol;
    let mut sweep = 0;
    while !converged && sweep < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // A ← Jᵀ A J, touching rows/columns p and q only.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
        sweep += 1;
        converged = off(&a) <= tol;
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:.3e})",
            off(&a)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (newj, &oldj) in order.iter().enumerate() {
        for k in 0..n {
            vecs.data[k * n + newj] = v[k * n + oldj];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vecs,
    })
}

/// [`sym_eig`] for matrices that should be positive semidefinite (covariances,
/// Gram matrices).
///
/// Eigenvalues in `[−PSD_CLAMP, 0)` are clamped to zero; anything more
/// negative is reported as [`Error::NumericalFailure`].
pub fn psd_eig(c: &Matrix) -> Result<EigenDecomposition> {
    let mut e = sym_eig(c)?;
    for l in &mut e.eigenvalues {
        if *l < 0.0 {
            if *l >= -PSD_CLAMP {
                *l = 0.0;
            } else {
                return Err(Error::NumericalFailure(format!(
                    "matrix expected to be PSD has eigenvalue {l:.3e}"
                )));
            }
        }
    }
    Ok(e)
}

/// Smallest singular value of `w`.
///
/// Computed as the square root of the smallest eigenvalue of the smaller Gram
/// matrix (`WᵀW` when `W` is tall or square, `WWᵀ` when it is wide), so the
/// result is the smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value(w: &Matrix) -> Result<f64> {
    if w.rows == 0 || w.cols == 0 {
        return Err(Error::InvalidInput("min_singular_value of an empty matrix".into()));
    }
    require_finite(w, "matrix")?;
    let gram = if w.rows >= w.cols {
        w.transpose().matmul(w)?
    } else {
        w.matmul(&w.transpose())?
    };
    // A Gram matrix is PSD, but rounding can push its smallest eigenvalue
    // slightly below zero relative to its scale.
    let e = sym_eig(&gram)?;
    let lmin = *e.eigenvalues.last().expect("non-empty spectrum");
    Ok(lmin.max(0.0).sqrt())
}

/// Orthonormalise the given columns with two passes of modified Gram–Schmidt.
///
/// Used to restore exact orthonormality of bases that were round-tripped
/// through 32-bit storage.
pub fn orthonormalize_columns(m: &Matrix) -> Result<Matrix> {
    let (d, k) = (m.rows, m.cols);
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| m.column(j)).collect();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let (before, rest) = cols.split_at_mut(j);
                let proj = dot(&before[i], &rest[0]);
                for (x, y) in rest[0].iter_mut().zip(&before[i]) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm(&cols[j]);
        if nrm < 1e-8 {
            return Err(Error::DegenerateInput(format!(
                "column {j} is linearly dependent on the previous ones"
            )));
        }
        for x in &mut cols[j] {
            *x /= nrm;
        }
    }
    Matrix::from_columns(d, &cols)
}
