// SPDX-License-Identifier: MIT OR Apache-2.0

//! Difference-in-means steering directions and layer selection.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asf::{ActivationSet, SetTag};
use crate::error::{Error, Result};
use crate::iforest::{filter_outliers, OutlierConfig};
use crate::linalg::{norm, Matrix};
use crate::rng::SeedTree;

/// Guard added to the pooled variance in the Fisher score.
pub const FISHER_EPS: f64 = 1e-9;
/// Below this pre-normalisation norm a direction is considered absent.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Per-class sample budget for direction estimation.
pub const DEFAULT_BUDGET: usize = 100;

/// Where a direction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    ManifoldProjected,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Raw => "raw",
            Provenance::ManifoldProjected => "manifold_projected",
        }
    }
}

/// A unit steering vector tied to the layer it was extracted at.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringDirection {
    pub layer: usize,
    pub vector: Vec<f64>,
    pub provenance: Provenance,
    pub k_used: Option<usize>,
    /// Norm before normalisation: `‖μ_red − μ_con‖` for raw directions,
    /// `‖P_M r‖` for projected ones.
    pub prenorm: f64,
}

impl SteeringDirection {
    /// Wrap an arbitrary non-zero vector as a raw direction (normalised).
    pub fn from_vector(layer: usize, v: &[f64]) -> Result<Self> {
        let n = norm(v);
        if !(n >= DEGENERATE_NORM) {
            return Err(Error::DegenerateInput("direction vector has zero norm".into()));
        }
        Ok(SteeringDirection {
            layer,
            vector: v.iter().map(|x| x / n).collect(),
            provenance: Provenance::Raw,
            k_used: None,
            prenorm: n,
        })
    }

    pub fn d(&self) -> usize {
        self.vector.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("direction has non-finite entries".into()));
        }
        let n = norm(&self.vector);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("direction norm is {n}, expected 1")));
        }
        if self.provenance == Provenance::ManifoldProjected && self.k_used.is_none() {
            return Err(Error::Validation(
                "manifold_projected direction must record k_used".into(),
            ));
        }
        Ok(())
    }

    /// Serialise as the direction JSON, every float with 17 significant
    /// digits.
    pub fn to_json(&self) -> String {
        let k = self.k_used.map(|k| k.to_string()).unwrap_or_else(|| "null".to_string());
        let vec: Vec<String> = self.vector.iter().map(|&v| fmt17(v)).collect();
        format!(
            "{{\n  \"layer\": {},\n  \"d\": {},\n  \"provenance\": \"{}\",\n  \"k_used\": {},\n  \"prenorm\": {},\n  \"vector\": [{}]\n}}\n",
            self.layer,
            self.d(),
            self.provenance.as_str(),
            k,
            fmt17(self.prenorm),
            vec.join(", ")
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DirectionFile =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("direction file: {e}")))?;
        if f.vector.len() != f.d {
            return Err(Error::Validation(format!(
                "direction file: vector has {} entries but d={}",
                f.vector.len(),
                f.d
            )));
        }
        let dir = SteeringDirection {
            layer: f.layer,
            vector: f.vector,
            provenance: f.provenance,
            k_used: f.k_used,
            prenorm: f.prenorm,
        };
        dir.validate()
            .map_err(|e| Error::Validation(format!("direction file: {e}")))?;
        Ok(dir)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SteeringDirection::from_json(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectionFile {
    layer: usize,
    d: usize,
    provenance: Provenance,
    k_used: Option<usize>,
    prenorm: f64,
    vector: Vec<f64>,
}

/// Format a float with 17 significant digits (round-trips every `f64`).
pub fn fmt17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    format!("{v:.16e}")
}

/// Output of [`diff_in_means`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawDirection {
    pub vector: Vec<f64>,
    pub prenorm: f64,
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, &v) in mean.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    let n = m.rows() as f64;
    mean.iter_mut().for_each(|a| *a /= n);
    mean
}

/// `normalize(mean(redundant) − mean(concise))` together with the norm
/// before normalisation.
pub fn diff_in_means(redundant: &Matrix, concise: &Matrix) -> Result<RawDirection> {
    if redundant.rows() == 0 || concise.rows() == 0 {
        return Err(Error::InvalidInput(
            "difference-in-means needs at least one row per class".into(),
        ));
    }
    if redundant.cols() != concise.cols() {
        return Err(Error::InvalidInput(format!(
            "class matrices disagree on d: {} vs {}",
            redundant.cols(),
            concise.cols()
        )));
    }
    let mr = column_means(redundant);
    let mc = column_means(concise);
    let diff: Vec<f64> = mr.iter().zip(&mc).map(|(a, b)| a - b).collect();
    let n = norm(&diff);
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateInput(format!(
            "class means coincide (difference norm {n:.3e})"
        )));
    }
    Ok(RawDirection {
        vector: diff.iter().map(|v| v / n).collect(),
        prenorm: n,
    })
}

/// One row of a [`LayerScoreTable`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScore {
    pub layer: usize,
    pub separation_score: f64,
    pub selected: bool,
}

/// Per-layer separation scores with exactly one selected layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScoreTable {
    pub rows: Vec<LayerScore>,
}

impl LayerScoreTable {
    pub fn selected(&self) -> usize {
        self.rows
            .iter()
            .find(|r| r.selected)
            .map(|r| r.layer)
            .expect("score table always has a selected layer")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,separation_score,selected\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.layer, fmt17(r.separation_score), r.selected));
        }
        s
    }
}

/// Fisher-style score of the class means along their own difference
/// direction: `(Δ·r)² / (pooled within-class variance along r + ε)`.
pub fn fisher_score(redundant: &Matrix, concise: &Matrix) -> Result<f64> {
    let mr = column_means(redundant);
    let mc = column_means(concise);
    let diff: Vec<f64> = mr.iter().zip(&mc).map(|(a, b)| a - b).collect();
    let n = norm(&diff);
    if !(n >= DEGENERATE_NORM) {
        return Ok(0.0);
    }
    let r: Vec<f64> = diff.iter().map(|v| v / n).collect();
    let proj = |m: &Matrix| -> Vec<f64> {
        (0..m.rows())
            .map(|i| m.row(i).iter().zip(&r).map(|(a, b)| a * b).sum())
            .collect()
    };
    let pr = proj(redundant);
    let pc = proj(concise);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ar, ac) = (mean(&pr), mean(&pc));
    let ss = pr.iter().map(|x| (x - ar) * (x - ar)).sum::<f64>() + pc.iter().map(|x| (x - ac) * (x - ac)).sum::<f64>();
    let dof = (pr.len() + pc.len()).saturating_sub(2);
    let pooled = if dof == 0 { 0.0 } else { ss / dof as f64 };
    Ok((ar - ac) * (ar - ac) / (pooled + FISHER_EPS))
}

/// Score every layer and select the best (ties → lowest layer id).
pub fn score_layers(set: &ActivationSet) -> Result<LayerScoreTable> {
    let layers = set.layer_ids();
    let scores: Vec<Result<f64>> = layers
        .par_iter()
        .map(|&l| {
            let r = set.layer_matrix(l, Some(SetTag::Redundant))?;
            let c = set.layer_matrix(l, Some(SetTag::Concise))?;
            if r.rows() == 0 || c.rows() == 0 {
                return Err(Error::Validation(format!(
                    "layer {l} has an empty class ({} redundant, {} concise)",
                    r.rows(),
                    c.rows()
                )));
            }
            fisher_score(&r, &c)
        })
        .collect();
    let mut rows = Vec::with_capacity(layers.len());
    for (&l, s) in layers.iter().zip(scores) {
        rows.push(LayerScore {
            layer: l,
            separation_score: s?,
            selected: false,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.separation_score > rows[best].separation_score {
            best = i;
        }
    }
    rows[best].selected = true;
    Ok(LayerScoreTable { rows })
}

/// Options for [`extract_direction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// Rows drawn per class before filtering; `None` uses every row.
    pub budget_per_class: Option<usize>,
    pub outliers: OutlierConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            budget_per_class: Some(DEFAULT_BUDGET),
            outliers: OutlierConfig::default(),
        }
    }
}

/// Rows per class that reach the difference of means under `cfg`
/// (`(n_red, n_con)` after the budget and outlier removal).
pub fn effective_class_sizes(set: &ActivationSet, cfg: &ExtractConfig) -> (usize, usize) {
    let used = |tag: SetTag| {
        let n = cfg.budget_per_class.map_or(set.count(tag), |b| b.min(set.count(tag)));
        if cfg.outliers.method == crate::iforest::OutlierMethod::None || cfg.outliers.contamination == 0.0 {
            n
        } else {
            n - crate::iforest::removal_count(n, cfg.outliers.contamination)
        }
    };
    (used(SetTag::Redundant), used(SetTag::Concise))
}

/// Draw at most `budget` rows (sorted, so manifest order is kept).
fn subsample_rows(m: &Matrix, budget: Option<usize>, seed: SeedTree) -> Matrix {
    match budget {
        Some(b) if m.rows() > b => {
            let mut idx = sample(&mut seed.rng(), m.rows(), b).into_vec();
            idx.sort_unstable();
            m.select_rows(&idx)
        }
        _ => m.clone(),
    }
}

fn filter_class(m: &Matrix, cfg: &OutlierConfig, seed: SeedTree) -> Result<Matrix> {
    if cfg.method == crate::iforest::OutlierMethod::None || cfg.contamination == 0.0 {
        return Ok(m.clone());
    }
    Ok(filter_outliers(m, cfg, seed)?.0)
}

/// Full raw-direction estimate at one layer: per-class subsample, per-class
/// outlier filtering, then difference-in-means.
pub fn extract_direction(
    set: &ActivationSet,
    layer: usize,
    cfg: &ExtractConfig,
    seed: SeedTree,
) -> Result<SteeringDirection> {
    let red = set.layer_matrix(layer, Some(SetTag::Redundant))?;
    let con = set.layer_matrix(layer, Some(SetTag::Concise))?;
    if red.rows() == 0 || con.rows() == 0 {
        return Err(Error::Validation(format!("layer {layer} has an empty class")));
    }
    let red = subsample_rows(&red, cfg.budget_per_class, seed.child("budget-redundant"));
    let con = subsample_rows(&con, cfg.budget_per_class, seed.child("budget-concise"));
    let red = filter_class(&red, &cfg.outliers, seed.child("outliers-redundant"))?;
    let con = filter_class(&con, &cfg.outliers, seed.child("outliers-concise"))?;
    let raw = diff_in_means(&red, &con)?;
    Ok(SteeringDirection {
        layer,
        vector: raw.vector,
        provenance: Provenance::Raw,
        k_used: None,
        prenorm: raw.prenorm,
    })
}
