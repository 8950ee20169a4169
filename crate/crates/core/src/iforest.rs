// SPDX-License-Identifier: MIT OR Apache-2.0

//! Outlier filtering for the contrastive activation sets.
//!
//! The primary filter is an isolation forest: random axis-aligned splits
//! isolate anomalous rows in fewer steps, so a short expected path length
//! means a high anomaly score `s(x) = 2^(−E[h(x)] / c(ψ))`. A simple
//! median/MAD distance trim is available as a debugging fallback.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SeedTree;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 64;
pub const DEFAULT_CONTAMINATION: f64 = 0.10;
pub const MIN_ROWS: usize = 10;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Which outlier filter to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutlierMethod {
    #[default]
    IsolationForest,
    /// Distance to the coordinate-wise median, scaled by its MAD.
    MedianMad,
    /// Keep every row.
    None,
}

/// Filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierConfig {
    pub method: OutlierMethod,
    pub contamination: f64,
    pub trees: usize,
    pub subsample: usize,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            method: OutlierMethod::IsolationForest,
            contamination: DEFAULT_CONTAMINATION,
            trees: DEFAULT_TREES,
            subsample: DEFAULT_SUBSAMPLE,
        }
    }
}

/// Average path length of an unsuccessful BST search over `n` points; the
/// normaliser `c(n)` of the isolation-forest score.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

enum Node {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn build(m: &Matrix, idx: &mut [usize], depth: usize, limit: usize, rng: &mut impl Rng) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    // Only features that actually vary inside this node can split it.
    let mut candidates = Vec::new();
    for f in 0..m.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in idx.iter() {
            let v = m.get(i, f);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            candidates.push((f, lo, hi));
        }
    }
    if candidates.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (feature, lo, hi) = candidates[rng.random_range(0..candidates.len())];
    let mut threshold = lo + rng.random::<f64>() * (hi - lo);
    if threshold <= lo {
        threshold = lo + (hi - lo) * 0.5;
    }
    // Partition in place: values < threshold go left.
    let mut split = 0;
    for j in 0..idx.len() {
        if m.get(idx[j], feature) < threshold {
            idx.swap(split, j);
            split += 1;
        }
    }
    let (l, r) = idx.split_at_mut(split);
    Node::Split {
        feature,
        threshold,
        left: Box::new(build(m, l, depth + 1, limit, rng)),
        right: Box::new(build(m, r, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, x: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + average_path_length(*size),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] < *threshold {
                path_length(left, x, depth + 1)
            } else {
                path_length(right, x, depth + 1)
            }
        }
    }
}

/// A fitted isolation forest.
pub struct IsolationForest {
    trees: Vec<Node>,
    psi: usize,
}

impl IsolationForest {
    /// Grow `trees` trees on random subsamples of `min(subsample, rows)` rows.
    pub fn fit(m: &Matrix, trees: usize, subsample: usize, seed: SeedTree) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::DegenerateInput("isolation forest on empty matrix".into()));
        }
        let psi = subsample.min(m.rows()).max(1);
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = seed.rng();
        let mut forest = Vec::with_capacity(trees);
        for _ in 0..trees {
            let mut idx = sample(&mut rng, m.rows(), psi).into_vec();
            idx.sort_unstable();
            forest.push(build(m, &mut idx, 0, limit, &mut rng));
        }
        Ok(IsolationForest { trees: forest, psi })
    }

    /// Anomaly score in (0, 1]; larger means more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        let mean = self.trees.iter().map(|t| path_length(t, x, 0)).sum::<f64>() / self.trees.len() as f64;
        let c = average_path_length(self.psi);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-mean / c)
    }
}

/// Number of rows removed for a contamination fraction.
///
/// A small slack keeps products like `0.07 · 100 = 7.000000000000001` from
/// rounding up to 8.
pub fn removal_count(rows: usize, contamination: f64) -> usize {
    let x = contamination * rows as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(rows)
}

/// Per-row anomaly scores under `cfg.method`.
pub fn anomaly_scores(m: &Matrix, cfg: &OutlierConfig, seed: SeedTree) -> Result<Vec<f64>> {
    match cfg.method {
        OutlierMethod::IsolationForest => {
            let f = IsolationForest::fit(m, cfg.trees, cfg.subsample, seed)?;
            Ok((0..m.rows()).map(|i| f.score(m.row(i))).collect())
        }
        OutlierMethod::MedianMad => Ok(median_mad_scores(m)),
        OutlierMethod::None => Ok(vec![0.0; m.rows()]),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust z-score of each row's Euclidean distance to the coordinate-wise
/// median.
pub fn median_mad_scores(m: &Matrix) -> Vec<f64> {
    let med: Vec<f64> = (0..m.cols()).map(|j| median(&mut m.column(j))).collect();
    let dist: Vec<f64> = (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .zip(&med)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let dmed = median(&mut dist.clone());
    let mut dev: Vec<f64> = dist.iter().map(|d| (d - dmed).abs()).collect();
    let mad = median(&mut dev).max(1e-12);
    dist.iter().map(|d| (d - dmed) / mad).collect()
}

/// Remove the `⌈contamination · rows⌉` most anomalous rows.
///
/// Returns the kept rows (original order) and the removed row indices
/// (ascending). Ties in score are broken by row index so that the result is
/// a pure function of `(m, cfg, seed)`.
pub fn filter_outliers(m: &Matrix, cfg: &OutlierConfig, seed: SeedTree) -> Result<(Matrix, Vec<usize>)> {
    if m.rows() < MIN_ROWS {
        return Err(Error::DegenerateInput(format!(
            "outlier filtering needs at least {MIN_ROWS} rows, got {}",
            m.rows()
        )));
    }
    if !(0.0..0.5).contains(&cfg.contamination) {
        return Err(Error::InvalidInput(format!(
            "contamination must lie in [0, 0.5), got {}",
            cfg.contamination
        )));
    }
    let n_remove = if cfg.method == OutlierMethod::None {
        0
    } else {
        removal_count(m.rows(), cfg.contamination)
    };
    if n_remove == 0 {
        return Ok((m.clone(), Vec::new()));
    }
    let scores = anomaly_scores(m, cfg, seed)?;
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut removed: Vec<usize> = order[..n_remove].to_vec();
    removed.sort_unstable();
    let kept: Vec<usize> = (0..m.rows()).filter(|i| removed.binary_search(i).is_err()).collect();
    Ok((m.select_rows(&kept), removed))
}
