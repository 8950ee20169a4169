// SPDX-License-Identifier: MIT OR Apache-2.0

//! Measured mean-activation shifts under an intervention and their
//! layer-to-layer amplification.
//!
//! The intervention is applied at the direction's own layer only, so the
//! shift at that layer is the exact linear term `−α · mean(rᵀh) · r` and every
//! later layer shows how the perturbation propagates. The lower bound
//!
//! ```text
//! ‖Δμ⁽ˡ⁺¹⁾‖ ≥ γ‖Δμ⁽ˡ⁾‖ + α γ_attn γ_σ σ_min(W⁽ˡ⁺¹⁾) |mean r_otherᵀh⁽ˡ⁾| ‖r_other‖
//! ```
//!
//! needs constants that cannot be derived from the weights; it is evaluated
//! only when the caller supplies them (and a basis to split off `r_other`),
//! and it is reported next to the measurements, never enforced.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direction::{fmt17, SteeringDirection};
use crate::error::{Error, Result};
use crate::linalg::{dot, min_singular_value, norm, Matrix};
use crate::manifold::{mean_shift, ManifoldBasis};
use crate::steering::{fmt_alpha, InterventionConfig, LayerScope, PositionScope, SteeringHook};
use crate::toymodel::ToyModel;

/// User-supplied constants of the amplification bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationConstants {
    pub gamma: f64,
    pub gamma_attn: f64,
    pub gamma_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub alpha: f64,
    pub layer: usize,
    pub mean_shift_norm: f64,
    /// Ratio to the previous layer's shift (absent at the first layer and
    /// whenever the previous shift is zero).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_amplification: Option<f64>,
    /// Bound on this layer's shift from the previous layer's measured shift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFit {
    pub layer: usize,
    /// Least-squares slope of `‖Δμ‖` against α, line through the origin.
    pub slope: f64,
    /// Coefficient of determination of that fit (1 when the shift is
    /// identically zero).
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub intervened_layer: usize,
    pub n_probes: usize,
    pub rows: Vec<ShiftRow>,
    pub fits: Vec<LayerFit>,
    /// σ_min of each block's MLP output projection.
    pub sigma_min_mlp: Vec<f64>,
    /// σ_min of each block's attention output projection.
    pub sigma_min_attn: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_constants: Option<AmplificationConstants>,
}

impl ShiftReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("shift report serialises") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        let mut s = String::from("alpha,layer,mean_shift_norm,measured_amplification,lower_bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_alpha(r.alpha),
                r.layer,
                fmt17(r.mean_shift_norm),
                opt(r.measured_amplification),
                opt(r.lower_bound)
            ));
        }
        s
    }

    pub fn fit(&self, layer: usize) -> Option<&LayerFit> {
        self.fits.iter().find(|f| f.layer == layer)
    }

    /// Shift norms at `layer`, in α order.
    pub fn norms(&self, layer: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.mean_shift_norm)
            .collect()
    }
}

/// Least-squares line through the origin `y ≈ s·x`, returning `s` and
/// `R² = 1 − SSE / Σ(y − ȳ)²` (1 when `y` is constant and fit exactly).
pub fn origin_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - slope * a;
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - sse / syy
    };
    (slope, r2)
}

fn final_acts(model: &ToyModel, probe: &[u32], hook: Option<&SteeringHook<'_>>) -> Result<Vec<Vec<f64>>> {
    let h = hook.map(|h| h as &dyn crate::toymodel::Hook);
    Ok(model
        .final_token_activations(probe, h)?
        .into_iter()
        .map(|v| v.into_iter().map(f64::from).collect())
        .collect())
}

/// Per-layer, per-α mean shift of final-token block outputs over
/// `probes`, with the direction applied at its own layer (all positions).
pub fn amplification_report(
    model: &ToyModel,
    dir: &SteeringDirection,
    alphas: &[f64],
    probes: &[Vec<u32>],
    constants: Option<AmplificationConstants>,
    basis: Option<&ManifoldBasis>,
) -> Result<ShiftReport> {
    if probes.is_empty() {
        return Err(Error::InvalidInput("amplification report needs a probe corpus".into()));
    }
    if !alphas.contains(&0.0) {
        return Err(Error::InvalidInput("alphas must include 0".into()));
    }
    if dir.d() != model.d() {
        return Err(Error::Validation(format!(
            "direction has d={} but model has d={}",
            dir.d(),
            model.d()
        )));
    }
    let nl = model.layers();
    let li = dir.layer;
    if li >= nl {
        return Err(Error::Validation(format!(
            "direction layer {li} out of range for {nl} layers"
        )));
    }
    let d = model.d();

    let clean: Vec<Vec<Vec<f64>>> = probes
        .par_iter()
        .map(|p| final_acts(model, p, None))
        .collect::<Result<_>>()?;
    // clean activations at every layer as matrices (rows = probes)
    let clean_at = |l: usize| -> Matrix {
        let rows: Vec<&[f64]> = clean.iter().map(|c| c[l].as_slice()).collect();
        Matrix::from_rows(&rows).expect("uniform width")
    };

    let (r_other, other_norm) = match basis {
        Some(b) => {
            let ro = b.residual(&dir.vector)?;
            let n = norm(&ro);
            (Some(ro), n)
        }
        None => (None, 0.0),
    };
    let sigma_min_mlp: Vec<f64> = (0..nl)
        .map(|l| min_singular_value(&model.mlp_out_matrix(l)))
        .collect::<Result<_>>()?;
    let sigma_min_attn: Vec<f64> = (0..nl)
        .map(|l| min_singular_value(&model.attn_out_matrix(l)))
        .collect::<Result<_>>()?;
    // |mean r_otherᵀ h⁽ˡ⁾| on clean activations
    let other_proj: Vec<f64> = match &r_other {
        Some(ro) => (0..nl)
            .map(|l| (clean.iter().map(|c| dot(ro, &c[l])).sum::<f64>() / probes.len() as f64).abs())
            .collect(),
        None => Vec::new(),
    };

    let n = probes.len() as f64;
    let mut norms = vec![vec![0.0f64; nl]; alphas.len()];
    for (ai, &alpha) in alphas.iter().enumerate() {
        if alpha == 0.0 {
            continue;
        }
        let cfg = InterventionConfig {
            direction: dir.clone(),
            alpha,
            scope: LayerScope::Layer(li),
            sign: crate::steering::Sign::Forward,
            positions: PositionScope::Both,
        };
        let steered: Vec<Vec<Vec<f64>>> = probes
            .par_iter()
            .map(|p| {
                let hook = SteeringHook::new(&cfg, p.len());
                final_acts(model, p, Some(&hook))
            })
            .collect::<Result<_>>()?;
        for l in li..nl {
            norms[ai][l] = if l == li {
                // exact linear term, free of f32 rounding
                mean_shift(&clean_at(l), dir, alpha)?.1
            } else {
                let mut mean = vec![0.0f64; d];
                for (s, c) in steered.iter().zip(&clean) {
                    for ((m, a), b) in mean.iter_mut().zip(&s[l]).zip(&c[l]) {
                        *m += a - b;
                    }
                }
                norm(&mean) / n
            };
        }
    }

    let mut rows = Vec::with_capacity(alphas.len() * nl);
    for (ai, &alpha) in alphas.iter().enumerate() {
        for l in 0..nl {
            let prev = if l > 0 { Some(norms[ai][l - 1]) } else { None };
            let measured_amplification = prev.filter(|&p| p > 0.0).map(|p| norms[ai][l] / p);
            let lower_bound = match (constants, prev, r_other.is_some()) {
                (Some(c), Some(p), true) => Some(
                    c.gamma * p
                        + alpha.abs()
                            * c.gamma_attn
                            * c.gamma_sigma
                            * sigma_min_mlp[l]
                            * other_proj[l - 1]
                            * other_norm,
                ),
                _ => None,
            };
            rows.push(ShiftRow {
                alpha,
                layer: l,
                mean_shift_norm: norms[ai][l],
                measured_amplification,
                lower_bound,
            });
        }
    }
    let fits = (0..nl)
        .map(|l| {
            let y: Vec<f64> = norms.iter().map(|r| r[l]).collect();
            let (slope, r_squared) = origin_fit(alphas, &y);
            LayerFit {
                layer: l,
                slope,
                r_squared,
            }
        })
        .collect();
    Ok(ShiftReport {
        intervened_layer: li,
        n_probes: probes.len(),
        rows,
        fits,
        sigma_min_mlp,
        sigma_min_attn,
        user_constants: constants,
    })
}
