// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear activation manifold: PCA basis, projection of steering directions
//! onto it, and the interference-noise diagnostic.
//!
//! The manifold at a layer is the span of the top-`k` eigenvectors of the
//! activation covariance. A difference-in-means direction estimated from a
//! finite sample carries an additive Gaussian error with covariance
//! `C · (1/n_red + 1/n_con)`; the part of that error outside the manifold has
//! expected squared norm `tr((I − P_M) C) · (1/n_red + 1/n_con)`, which
//! [`noise_norm`] reports both in closed form and by simulation.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asf::{crc32_hex, f32_from_le_bytes, f32_le_bytes, ActivationSet, SetTag};
use crate::direction::{fmt17, Provenance, SteeringDirection, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::linalg::{covariance, dot, norm, orthonormalize_columns, psd_eig, Matrix};
use crate::rng::SeedTree;

pub const DEFAULT_VAR_TARGET: f64 = 0.70;
pub const DEFAULT_K_CAP: usize = 10;
pub const DEFAULT_MC_RESAMPLES: usize = 5000;
/// Residual tolerance for a projected direction.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    Fixed(usize),
    /// Smallest `k` with `VR(k) ≥ target`, then capped at `cap`.
    VarianceTarget {
        target: f64,
        cap: usize,
    },
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::VarianceTarget {
            target: DEFAULT_VAR_TARGET,
            cap: DEFAULT_K_CAP,
        }
    }
}

/// Which samples feed the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovPopulation {
    /// Redundant ∪ concise.
    #[default]
    Union,
    RedundantOnly,
}

impl CovPopulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovPopulation::Union => "union",
            CovPopulation::RedundantOnly => "redundant_only",
        }
    }
}

/// Top-`k` orthonormal principal directions at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldBasis {
    pub layer: usize,
    pub k: usize,
    /// `d × k`, orthonormal columns.
    pub basis: Matrix,
    /// Full descending spectrum (length `d`).
    pub eigenvalues: Vec<f64>,
    pub sample_count: usize,
}

impl ManifoldBasis {
    pub fn d(&self) -> usize {
        self.basis.rows()
    }

    /// `P_M = B Bᵀ`.
    pub fn projector(&self) -> Matrix {
        self.basis.matmul(&self.basis.transpose()).expect("basis shapes agree")
    }

    /// `B Bᵀ v`, computed as `B (Bᵀ v)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let c = self.basis.tr_matvec(v)?;
        self.basis.matvec(&c)
    }

    /// `(I − P_M) v`.
    pub fn residual(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(v)?;
        Ok(v.iter().zip(&p).map(|(a, b)| a - b).collect())
    }

    /// `‖BᵀB − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose().matmul(&self.basis).expect("shapes");
        g.sub(&Matrix::identity(self.k)).expect("shapes").frobenius_norm()
    }
}

/// `VR(k) = Σ_{i≤k} λ_i / Σ_i λ_i`.
pub fn variance_ratio_of(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > eigenvalues.len() {
        return Err(Error::InvalidInput(format!(
            "k must lie in 1..={}, got {k}",
            eigenvalues.len()
        )));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("total variance is zero".into()));
    }
    if k == eigenvalues.len() {
        return Ok(1.0);
    }
    let head: f64 = eigenvalues[..k].iter().sum();
    Ok(head / total)
}

pub fn variance_ratio(basis: &ManifoldBasis, k: usize) -> Result<f64> {
    variance_ratio_of(&basis.eigenvalues, k)
}

/// Fit the PCA manifold on `samples` (rows) recorded at `layer`.
pub fn fit_manifold(samples: &Matrix, layer: usize, policy: KPolicy) -> Result<ManifoldBasis> {
    if samples.rows() < 2 {
        return Err(Error::DegenerateInput(format!(
            "manifold fit needs at least 2 samples, got {}",
            samples.rows()
        )));
    }
    let d = samples.cols();
    let cov = covariance(samples)?;
    let eig = psd_eig(&cov)?;
    let k = match policy {
        KPolicy::Fixed(k) => {
            if k == 0 || k > d {
                return Err(Error::InvalidInput(format!("fixed k must lie in 1..={d}, got {k}")));
            }
            k
        }
        KPolicy::VarianceTarget { target, cap } => {
            if !(target > 0.0 && target <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "variance target must lie in (0, 1], got {target}"
                )));
            }
            if cap == 0 {
                return Err(Error::InvalidInput("k cap must be positive".into()));
            }
            let mut k = d;
            for j in 1..=d {
                if variance_ratio_of(&eig.eigenvalues, j)? >= target {
                    k = j;
                    break;
                }
            }
            k.min(cap).min(d)
        }
    };
    let cols: Vec<Vec<f64>> = (0..k).map(|j| eig.vector(j)).collect();
    Ok(ManifoldBasis {
        layer,
        k,
        basis: Matrix::from_columns(d, &cols)?,
        eigenvalues: eig.eigenvalues,
        sample_count: samples.rows(),
    })
}

/// Rows of `set` at `layer` that feed the covariance under `population`.
pub fn population_matrix(set: &ActivationSet, layer: usize, population: CovPopulation) -> Result<Matrix> {
    match population {
        CovPopulation::Union => set.layer_matrix(layer, None),
        CovPopulation::RedundantOnly => set.layer_matrix(layer, Some(SetTag::Redundant)),
    }
}

/// Project a direction onto the manifold and renormalise.
pub fn project_direction(dir: &SteeringDirection, basis: &ManifoldBasis) -> Result<SteeringDirection> {
    if dir.layer != basis.layer {
        return Err(Error::InvalidInput(format!(
            "direction is for layer {} but basis is for layer {}",
            dir.layer, basis.layer
        )));
    }
    if dir.d() != basis.d() {
        return Err(Error::InvalidInput(format!(
            "direction has d={} but basis has d={}",
            dir.d(),
            basis.d()
        )));
    }
    let p = basis.project(&dir.vector)?;
    let n = norm(&p);
    if !(n > DEGENERATE_NORM) {
        return Err(Error::DegenerateInput(format!(
            "direction is orthogonal to the manifold (‖P_M r‖ = {n:.3e})"
        )));
    }
    let unit: Vec<f64> = p.iter().map(|v| v / n).collect();
    let res = norm(&basis.residual(&unit)?);
    if res > RESIDUAL_TOL {
        return Err(Error::NumericalFailure(format!(
            "projected direction leaves residual {res:.3e} outside the manifold"
        )));
    }
    Ok(SteeringDirection {
        layer: dir.layer,
        vector: unit,
        provenance: Provenance::ManifoldProjected,
        k_used: Some(basis.k),
        prenorm: n,
    })
}

/// Closed-form and simulated off-manifold noise of a difference-in-means
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub layer: usize,
    pub k: usize,
    pub n_red: usize,
    pub n_con: usize,
    /// `tr((I − P_M) C) · (1/n_red + 1/n_con)`.
    pub analytic_norm_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo_norm_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_resamples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_gap: Option<f64>,
    /// `1/n_red + 1/n_con`.
    pub sigma_noise_scale: f64,
    /// Population the covariance was estimated on, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance_population: Option<CovPopulation>,
}

impl NoiseReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        format!(
            "layer,k,n_red,n_con,analytic_norm_sq,monte_carlo_norm_sq,mc_resamples,relative_gap,sigma_noise_scale\n{},{},{},{},{},{},{},{},{}\n",
            self.layer,
            self.k,
            self.n_red,
            self.n_con,
            fmt17(self.analytic_norm_sq),
            opt(self.monte_carlo_norm_sq),
            self.mc_resamples.map(|v| v.to_string()).unwrap_or_default(),
            opt(self.relative_gap),
            fmt17(self.sigma_noise_scale)
        )
    }
}

/// Resamples per worker shard; the shard → seed mapping is fixed, so the
/// estimate does not depend on the thread count.
const MC_SHARD: usize = 250;

/// Interference-noise report for `basis` under covariance `cov`.
///
/// The Monte-Carlo estimate simulates the whole estimator: each resample
/// draws `n_red` and `n_con` activations from `N(μ_class, C)`, forms the
/// difference of sample means, subtracts the true mean difference and
/// measures the squared norm of its off-manifold part. Sampling from
/// `N(0, C)` uses `x = V Λ^{1/2} z` with the eigendecomposition of `C`, which
/// also handles singular covariances. Because the class means cancel exactly,
/// the simulation uses `μ = 0` for both classes.
pub fn noise_norm(
    basis: &ManifoldBasis,
    cov: &Matrix,
    n_red: usize,
    n_con: usize,
    mc_resamples: usize,
    seed: SeedTree,
) -> Result<NoiseReport> {
    let d = basis.d();
    if !cov.is_square() || cov.rows() != d {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{} but basis has d={d}",
            cov.rows(),
            cov.cols()
        )));
    }
    if n_red == 0 || n_con == 0 {
        return Err(Error::InvalidInput("class sizes must be at least 1".into()));
    }
    let scale = 1.0 / n_red as f64 + 1.0 / n_con as f64;
    // tr((I − P)C) = tr(C) − tr(Bᵀ C B)
    let cb = cov.matmul(&basis.basis)?;
    let mut in_manifold = 0.0;
    for j in 0..basis.k {
        for i in 0..d {
            in_manifold += basis.basis.get(i, j) * cb.get(i, j);
        }
    }
    let trace_perp = (cov.trace() - in_manifold).max(0.0);
    let analytic = trace_perp * scale;

    let mut report = NoiseReport {
        layer: basis.layer,
        k: basis.k,
        n_red,
        n_con,
        analytic_norm_sq: analytic,
        monte_carlo_norm_sq: None,
        mc_resamples: None,
        relative_gap: None,
        sigma_noise_scale: scale,
        covariance_population: None,
    };
    if mc_resamples == 0 {
        return Ok(report);
    }

    let eig = psd_eig(cov)?;
    // L = V Λ^{1/2}, row-major d×d
    let mut l = eig.eigenvectors.clone();
    for j in 0..d {
        let s = eig.eigenvalues[j].sqrt();
        for i in 0..d {
            l.set(i, j, l.get(i, j) * s);
        }
    }
    let shards = mc_resamples.div_ceil(MC_SHARD);
    let partial: Vec<f64> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed.index(s as u64).rng();
            let count = MC_SHARD.min(mc_resamples - s * MC_SHARD);
            let mut zr = vec![0.0; d];
            let mut zc = vec![0.0; d];
            let mut acc = 0.0;
            for _ in 0..count {
                zr.iter_mut().for_each(|v| *v = 0.0);
                zc.iter_mut().for_each(|v| *v = 0.0);
                for _ in 0..n_red {
                    for v in zr.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += z;
                    }
                }
                for _ in 0..n_con {
                    for v in zc.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += z;
                    }
                }
                // mean difference in whitened coordinates, then colour with L
                let w: Vec<f64> = zr
                    .iter()
                    .zip(&zc)
                    .map(|(a, b)| a / n_red as f64 - b / n_con as f64)
                    .collect();
                let e = l.matvec(&w).expect("shapes agree");
                let r = basis.residual(&e).expect("shapes agree");
                acc += dot(&r, &r);
            }
            acc
        })
        .collect();
    let mc = partial.iter().sum::<f64>() / mc_resamples as f64;
    report.monte_carlo_norm_sq = Some(mc);
    report.mc_resamples = Some(mc_resamples);
    report.relative_gap = Some((analytic - mc).abs() / analytic.max(1e-12));
    Ok(report)
}

/// Mean activation shift `Δμ = −α · mean(rᵀh) · r` and its norm.
pub fn mean_shift(activations: &Matrix, dir: &SteeringDirection, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if activations.cols() != dir.d() {
        return Err(Error::InvalidInput(format!(
            "activations have d={} but direction has d={}",
            activations.cols(),
            dir.d()
        )));
    }
    if activations.rows() == 0 {
        return Err(Error::InvalidInput("mean shift over zero activations".into()));
    }
    let mean_proj = (0..activations.rows())
        .map(|i| dot(activations.row(i), &dir.vector))
        .sum::<f64>()
        / activations.rows() as f64;
    let coef = -alpha * mean_proj;
    let delta: Vec<f64> = dir.vector.iter().map(|r| coef * r).collect();
    Ok((delta, (alpha * mean_proj).abs() * norm(&dir.vector)))
}

/// Basis manifest written next to `basis.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub layer: usize,
    pub d: usize,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    /// CRC-32 of `basis.bin`.
    pub checksum: String,
    #[serde(default)]
    pub sample_count: usize,
}

pub const BASIS_BIN: &str = "basis.bin";

/// Write `<dir>/basis.json` and `<dir>/basis.bin` (f32le, column-major
/// `d × k`). Returns the path of the manifest.
pub fn write_basis(basis: &ManifoldBasis, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (d, k) = (basis.d(), basis.k);
    let mut vals = Vec::with_capacity(d * k);
    for j in 0..k {
        for i in 0..d {
            vals.push(basis.basis.get(i, j) as f32);
        }
    }
    let bytes = f32_le_bytes(&vals);
    let bin = dir.join(BASIS_BIN);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let manifest = BasisManifest {
        layer: basis.layer,
        d,
        k,
        eigenvalues: basis.eigenvalues.clone(),
        checksum: crc32_hex(&bytes),
        sample_count: basis.sample_count,
    };
    let mpath = dir.join("basis.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Validation(format!("cannot encode basis manifest: {e}")))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(mpath)
}

/// Read a basis manifest and its sibling `basis.bin`.
///
/// The 32-bit payload is orthonormalised again in 64-bit (two-pass
/// Gram–Schmidt) so the loaded projector is exact to double precision; the
/// spanned subspace moves by at most the 32-bit rounding of the file.
pub fn read_basis(manifest_path: &Path) -> Result<ManifoldBasis> {
    let text = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: BasisManifest =
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let bin = dir.join(BASIS_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != m.d * m.k * 4 {
        return Err(Error::Validation(format!(
            "{}: {} bytes, expected d={} x k={} x 4",
            bin.display(),
            bytes.len(),
            m.d,
            m.k
        )));
    }
    let actual = crc32_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&m.checksum) {
        return Err(Error::CorruptData(format!(
            "{}: checksum {actual} does not match manifest {}",
            bin.display(),
            m.checksum
        )));
    }
    if m.k == 0 || m.k > m.d || m.eigenvalues.len() != m.d {
        return Err(Error::Validation(format!(
            "{}: inconsistent d={}, k={}, {} eigenvalues",
            manifest_path.display(),
            m.d,
            m.k,
            m.eigenvalues.len()
        )));
    }
    let vals = f32_from_le_bytes(&bytes);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{}: non-finite basis entry", bin.display())));
    }
    let cols: Vec<Vec<f64>> = (0..m.k)
        .map(|j| vals[j * m.d..(j + 1) * m.d].iter().map(|&v| f64::from(v)).collect())
        .collect();
    let raw = Matrix::from_columns(m.d, &cols)?;
    let basis = orthonormalize_columns(&raw)?;
    Ok(ManifoldBasis {
        layer: m.layer,
        k: m.k,
        basis,
        eigenvalues: m.eigenvalues,
        sample_count: m.sample_count,
    })
}

/// Spectrum with cumulative variance ratio, as CSV.
pub fn spectrum_csv(basis: &ManifoldBasis) -> String {
    let total: f64 = basis.eigenvalues.iter().sum();
    let mut s = String::from("index,eigenvalue,cumulative_variance_ratio\n");
    let mut acc = 0.0;
    for (i, &l) in basis.eigenvalues.iter().enumerate() {
        acc += l;
        let vr = if total > 0.0 { acc / total } else { 0.0 };
        s.push_str(&format!("{},{},{}\n", i + 1, fmt17(l), fmt17(vr)));
    }
    s
}
