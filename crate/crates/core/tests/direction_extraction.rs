// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerkit_core::asf::{ActivationSet, SampleLabel, SetTag};
use steerkit_core::direction::{diff_in_means, extract_direction, score_layers, ExtractConfig};
use steerkit_core::iforest::{filter_outliers, OutlierConfig, OutlierMethod};
use steerkit_core::linalg::Matrix;
use steerkit_core::{ErrorKind, SeedTree};

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn cloud_with_far_point(seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = (0..99)
        .map(|_| (0..4).map(|_| rng.random_range(-0.1..0.1)).collect())
        .collect();
    rows.insert(37, vec![50.0, -40.0, 30.0, 60.0]);
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn isolation_forest_removes_the_far_point() {
    for seed in 0..5 {
        let x = cloud_with_far_point(seed);
        let cfg = OutlierConfig {
            contamination: 0.01,
            ..OutlierConfig::default()
        };
        let (kept, removed) = filter_outliers(&x, &cfg, SeedTree::new(seed)).unwrap();
        assert_eq!(removed, vec![37]);
        assert_eq!(kept.rows(), 99);
        // surviving rows keep their original order
        assert_eq!(kept.row(36), x.row(36));
        assert_eq!(kept.row(37), x.row(38));
    }
}

#[test]
fn median_mad_removes_the_far_point() {
    let x = cloud_with_far_point(9);
    let cfg = OutlierConfig {
        method: OutlierMethod::MedianMad,
        contamination: 0.01,
        ..OutlierConfig::default()
    };
    let (_, removed) = filter_outliers(&x, &cfg, SeedTree::new(0)).unwrap();
    assert_eq!(removed, vec![37]);
}

#[test]
fn zero_contamination_is_identity() {
    let x = cloud_with_far_point(1);
    let cfg = OutlierConfig {
        contamination: 0.0,
        ..OutlierConfig::default()
    };
    let (kept, removed) = filter_outliers(&x, &cfg, SeedTree::new(3)).unwrap();
    assert!(removed.is_empty());
    assert_eq!(kept, x);
}

#[test]
fn outlier_filter_rejects_bad_inputs() {
    let small = Matrix::zeros(5, 2);
    assert_eq!(
        filter_outliers(&small, &OutlierConfig::default(), SeedTree::new(0))
            .unwrap_err()
            .kind(),
        ErrorKind::DegenerateInput
    );
    let x = cloud_with_far_point(0);
    let cfg = OutlierConfig {
        contamination: 0.6,
        ..OutlierConfig::default()
    };
    assert_eq!(
        filter_outliers(&x, &cfg, SeedTree::new(0)).unwrap_err().kind(),
        ErrorKind::InvalidInput
    );
}

#[test]
fn outlier_filter_is_deterministic_per_seed() {
    let x = cloud_with_far_point(4);
    let cfg = OutlierConfig {
        contamination: 0.1,
        ..OutlierConfig::default()
    };
    let a = filter_outliers(&x, &cfg, SeedTree::new(11)).unwrap();
    let b = filter_outliers(&x, &cfg, SeedTree::new(11)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.len(), 10);
}

#[test]
fn diff_in_means_example() {
    let red = m(&[&[1.0, 0.0, 0.0, 0.0], &[1.0, 2.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0]]);
    let con = m(&[&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 1.0, 2.0], &[0.0, 0.0, 1.0, 1.0]]);
    let r = diff_in_means(&red, &con).unwrap();
    // means (1,1,0,0) and (0,0,1,1): difference (1,1,−1,−1), norm 2
    assert!((r.prenorm - 2.0).abs() <= 1e-15);
    for (got, want) in r.vector.iter().zip([0.5, 0.5, -0.5, -0.5]) {
        assert!((got - want).abs() <= 1e-15);
    }
}

#[test]
fn diff_in_means_identical_classes_is_degenerate() {
    let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(diff_in_means(&a, &a).unwrap_err().kind(), ErrorKind::DegenerateInput);
}

#[test]
fn diff_in_means_single_rows() {
    let r = diff_in_means(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 0.0]])).unwrap();
    assert_eq!(r.vector, vec![1.0, 0.0]);
    assert_eq!(r.prenorm, 1.0);
}

#[test]
fn diff_in_means_rejects_empty_class_and_width_mismatch() {
    let a = m(&[&[1.0, 0.0]]);
    assert_eq!(
        diff_in_means(&Matrix::zeros(0, 2), &a).unwrap_err().kind(),
        ErrorKind::InvalidInput
    );
    assert_eq!(
        diff_in_means(&a, &m(&[&[1.0, 0.0, 0.0]])).unwrap_err().kind(),
        ErrorKind::InvalidInput
    );
}

fn labelled(n_red: usize, n_con: usize) -> Vec<SampleLabel> {
    (0..n_red + n_con)
        .map(|i| SampleLabel {
            sample_id: format!("s{i}"),
            set_tag: if i < n_red { SetTag::Redundant } else { SetTag::Concise },
            token_count: 10,
            keyword_count: 0,
        })
        .collect()
}

/// Three layers of overlapping noise, except layer 2 where the classes are
/// well apart.
fn clustered_set(separated: &[usize], layers: &[usize]) -> ActivationSet {
    let (n_red, n_con, d) = (20, 20, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut map = BTreeMap::new();
    for &l in layers {
        let mut data = Vec::new();
        for i in 0..n_red + n_con {
            let shift = if separated.contains(&l) && i < n_red { 10.0 } else { 0.0 };
            for j in 0..d {
                let base = if j == 0 { shift } else { 0.0 };
                data.push((base + rng.random_range(-1.0..1.0)) as f32);
            }
        }
        map.insert(l, data);
    }
    ActivationSet::new("clusters", d, map, labelled(n_red, n_con)).unwrap()
}

#[test]
fn score_layers_picks_the_separated_layer() {
    let t = score_layers(&clustered_set(&[2], &[0, 1, 2, 3])).unwrap();
    assert_eq!(t.selected(), 2);
    assert_eq!(t.rows.iter().filter(|r| r.selected).count(), 1);
    let best = t.rows.iter().find(|r| r.layer == 2).unwrap().separation_score;
    assert!(t.rows.iter().all(|r| r.separation_score <= best));
}

#[test]
fn score_layers_ties_go_to_lowest_layer() {
    // identical payloads at layers 1 and 4
    let base = clustered_set(&[1], &[1]);
    let data = base.layer_data(1).unwrap().to_vec();
    let mut map = BTreeMap::new();
    map.insert(1, data.clone());
    map.insert(4, data);
    let set = ActivationSet::new("tie", 3, map, base.labels().to_vec()).unwrap();
    assert_eq!(score_layers(&set).unwrap().selected(), 1);
}

#[test]
fn score_layers_single_layer() {
    let t = score_layers(&clustered_set(&[], &[5])).unwrap();
    assert_eq!(t.selected(), 5);
    assert_eq!(t.rows.len(), 1);
}

#[test]
fn extract_direction_recovers_the_class_axis() {
    let set = clustered_set(&[2], &[0, 1, 2, 3]);
    let cfg = ExtractConfig {
        budget_per_class: None,
        outliers: OutlierConfig {
            method: OutlierMethod::None,
            ..OutlierConfig::default()
        },
    };
    let dir = extract_direction(&set, 2, &cfg, SeedTree::new(0)).unwrap();
    assert_eq!(dir.layer, 2);
    assert!(dir.vector[0] > 0.98);
    assert!((steerkit_core::linalg::norm(&dir.vector) - 1.0).abs() <= 1e-12);
    // with no subsampling and no filtering it is exactly the difference of means
    let red = set.layer_matrix(2, Some(SetTag::Redundant)).unwrap();
    let con = set.layer_matrix(2, Some(SetTag::Concise)).unwrap();
    let r = diff_in_means(&red, &con).unwrap();
    assert_eq!(dir.vector, r.vector);
    assert_eq!(dir.prenorm, r.prenorm);
}

#[test]
fn extract_direction_budget_and_seed() {
    let set = clustered_set(&[2], &[2]);
    let cfg = ExtractConfig {
        budget_per_class: Some(12),
        outliers: OutlierConfig {
            contamination: 0.1,
            ..OutlierConfig::default()
        },
    };
    let a = extract_direction(&set, 2, &cfg, SeedTree::new(5)).unwrap();
    let b = extract_direction(&set, 2, &cfg, SeedTree::new(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        steerkit_core::direction::effective_class_sizes(&set, &cfg),
        (12 - 2, 12 - 2)
    );
    assert_eq!(
        extract_direction(&set, 9, &cfg, SeedTree::new(5)).unwrap_err().kind(),
        ErrorKind::InvalidInput
    );
}

fn classes() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..6, 1usize..8, 1usize..8).prop_flat_map(|(d, nr, nc)| {
        (
            proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), nr),
            proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), nc),
        )
    })
}

fn mat(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariant_to_row_order((red, con) in classes(), rot in 0usize..8) {
        let Ok(a) = diff_in_means(&mat(&red), &mat(&con)) else { return Ok(()) };
        prop_assume!(a.prenorm > 1e-3);
        let mut red2 = red.clone();
        red2.reverse();
        let mut con2 = con.clone();
        let k = rot % con2.len();
        con2.rotate_left(k);
        let b = diff_in_means(&mat(&red2), &mat(&con2)).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn translation_equivariant((red, con) in classes(), t in proptest::collection::vec(-100.0f64..100.0, 6)) {
        let Ok(a) = diff_in_means(&mat(&red), &mat(&con)) else { return Ok(()) };
        prop_assume!(a.prenorm > 1e-3);
        let shift = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().zip(&t).map(|(x, s)| x + s).collect()).collect()
        };
        let b = diff_in_means(&mat(&shift(&red)), &mat(&shift(&con))).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn scale_invariant_direction((red, con) in classes(), s in 0.01f64..100.0) {
        let Ok(a) = diff_in_means(&mat(&red), &mat(&con)) else { return Ok(()) };
        let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()
        };
        let b = diff_in_means(&mat(&scale(&red)), &mat(&scale(&con))).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((b.prenorm - s * a.prenorm).abs() <= 1e-12 * s * a.prenorm);
    }
}
