// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use steerkit_core::asf::{read_asf, write_asf, ActivationSet, SampleLabel, SetTag};
use steerkit_core::direction::{score_layers, SteeringDirection};
use steerkit_core::manifold::read_basis;

const D: usize = 6;
const PER_CLASS: usize = 30;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_steerkit"));
    c.env_remove("STEERKIT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic value in [−0.5, 0.5).
fn jitter(i: usize, j: usize, l: usize) -> f32 {
    let h =
        (i as u64 * 0x9E37_79B9 + j as u64 * 0x85EB_CA6B + l as u64 * 0xC2B2_AE35).wrapping_mul(0x2545_F491_4F6C_DD1D);
    ((h >> 40) as f32) / (1u64 << 24) as f32 - 0.5
}

/// Three layers; layer 1 separates the classes along e₁ and has its largest
/// variance along e₀; its last coordinate is identically zero.
fn fixture(dir: &Path) {
    let n = 2 * PER_CLASS;
    let mut layers = BTreeMap::new();
    for l in 0..3 {
        let mut data = vec![0.0f32; n * D];
        for i in 0..n {
            let red = i < PER_CLASS;
            // coordinate 5 of layer 1 stays exactly zero
            for j in 0..D - usize::from(l == 1) {
                data[i * D + j] = 0.1 * jitter(i, j, l);
            }
            if red {
                data[i * D + 1] += if l == 1 { 1.0 } else { 0.2 };
            }
            if l == 1 {
                data[i * D] += 3.0 * jitter(i, 99, l);
            }
        }
        layers.insert(l, data);
    }
    let labels = (0..n)
        .map(|i| SampleLabel {
            sample_id: format!("s{i}"),
            set_tag: if i < PER_CLASS {
                SetTag::Redundant
            } else {
                SetTag::Concise
            },
            token_count: if i < PER_CLASS { 80 } else { 10 },
            keyword_count: if i < PER_CLASS { 6 } else { 0 },
        })
        .collect();
    let set = ActivationSet::new("fixture", D, layers, labels).unwrap();
    write_asf(&set, dir).unwrap();
}

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        fixture(&root.join("asf"));
        Env { _tmp: tmp, root }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }
}

fn read_json(path: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn extract_auto_uses_the_layer_score_selection() {
    let env = Env::new();
    let o = run(&[
        "extract",
        "--asf",
        &env.p("asf"),
        "--auto",
        "--out",
        &env.p("ex"),
        "--budget",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expected = score_layers(&read_asf(Path::new(&env.p("asf"))).unwrap())
        .unwrap()
        .selected();
    assert_eq!(expected, 1);
    let dir = SteeringDirection::load(Path::new(&env.p("ex/direction.json"))).unwrap();
    assert_eq!(dir.layer, expected);
    assert!(dir.vector[1] > 0.99, "{:?}", dir.vector);
    let scores = fs::read_to_string(env.p("ex/layer_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 4);
    let manifest = read_json(&env.p("ex/run_manifest.json"));
    assert_eq!(manifest["command"], "extract");
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v == "direction.json"));
}

#[test]
fn conflicting_and_malformed_flags_are_usage_errors() {
    let env = Env::new();
    let asf = env.p("asf");
    let out = env.p("o");
    for args in [
        vec![
            "manifold",
            "--asf",
            &asf,
            "--layer",
            "1",
            "--k",
            "2",
            "--var-target",
            "0.9",
            "--out",
            &out,
        ],
        vec!["extract", "--asf", &asf, "--layer", "1", "--auto", "--out", &out],
        vec!["extract", "--asf", &asf, "--out", &out],
        vec!["demo", "--out", &out, "--alpha-grid", "0:1"],
        vec!["no-such-command"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let o = bin()
        .args(["demo", "--out", &out])
        .env("STEERKIT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn invalid_inputs_exit_with_validation_status() {
    let env = Env::new();
    let o = run(&[
        "extract",
        "--asf",
        &env.p("missing"),
        "--layer",
        "0",
        "--out",
        &env.p("o"),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // corrupt one layer file
    let f = env.p("asf/layer_1.bin");
    let mut bytes = fs::read(&f).unwrap();
    bytes[5] ^= 0x40;
    fs::write(&f, bytes).unwrap();
    let o = run(&["extract", "--asf", &env.p("asf"), "--layer", "1", "--out", &env.p("o")]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("layer_1.bin"), "{}", stderr(&o));
}

#[test]
fn manifold_then_project_surfaces_degenerate_projection() {
    let env = Env::new();
    let o = run(&[
        "manifold",
        "--asf",
        &env.p("asf"),
        "--layer",
        "1",
        "--k",
        "1",
        "--out",
        &env.p("m"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let basis = env.p("m/basis/basis.json");
    assert_eq!(read_json(&basis)["k"], 1);
    // the top component is e0; e5 has no part in it
    let mut e5 = vec![0.0; D];
    e5[5] = 1.0;
    SteeringDirection::from_vector(1, &e5)
        .unwrap()
        .save(Path::new(&env.p("e5.json")))
        .unwrap();
    let o = run(&[
        "project",
        "--direction",
        &env.p("e5.json"),
        "--basis",
        &basis,
        "--out",
        &env.p("p"),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    // with k = 1 any direction with an in-manifold part projects onto ±b
    let mut mixed = vec![0.0; D];
    mixed[0] = 0.5;
    mixed[5] = 1.0;
    SteeringDirection::from_vector(1, &mixed)
        .unwrap()
        .save(Path::new(&env.p("mixed.json")))
        .unwrap();
    let o = run(&[
        "project",
        "--direction",
        &env.p("mixed.json"),
        "--basis",
        &basis,
        "--out",
        &env.p("p"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = SteeringDirection::load(Path::new(&env.p("p/direction_projected.json"))).unwrap();
    let b = read_basis(Path::new(&basis)).unwrap();
    let b: Vec<f64> = (0..D).map(|i| b.basis.get(i, 0)).collect();
    let sign = if b[0] * mixed[0] > 0.0 { 1.0 } else { -1.0 };
    for (x, y) in p.vector.iter().zip(&b) {
        assert!((x - sign * y).abs() < 1e-12, "{:?} vs {:?}", p.vector, b);
    }
    assert_eq!(p.k_used, Some(1));
}

#[test]
fn noise_without_resamples_reports_analytic_only() {
    let env = Env::new();
    let o = run(&[
        "manifold",
        "--asf",
        &env.p("asf"),
        "--layer",
        "1",
        "--k",
        "2",
        "--out",
        &env.p("m"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let basis = env.p("m/basis/basis.json");
    let o = run(&[
        "noise",
        "--asf",
        &env.p("asf"),
        "--basis",
        &basis,
        "--mc",
        "0",
        "--out",
        &env.p("n"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = read_json(&env.p("n/noise.json"));
    assert!(j["analytic_norm_sq"].as_f64().unwrap() > 0.0);
    assert!(j.get("monte_carlo_norm_sq").is_none());
    assert!(j.get("mc_resamples").is_none());
    let o = run(&[
        "noise",
        "--asf",
        &env.p("asf"),
        "--basis",
        &basis,
        "--mc",
        "200",
        "--out",
        &env.p("n2"),
    ]);
    assert_eq!(code(&o), 0);
    let j = read_json(&env.p("n2/noise.json"));
    assert_eq!(j["mc_resamples"], 200);
    assert!(j["monte_carlo_norm_sq"].as_f64().unwrap() > 0.0);
}

#[test]
fn demo_with_impossible_quota_exits_with_budget_status() {
    let env = Env::new();
    let o = run(&[
        "demo",
        "--out",
        &env.p("d"),
        "--threshold-w",
        "100000",
        "--max-attempts",
        "40",
        "--mc",
        "0",
    ]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("corpus"), "{}", stderr(&o));
}

#[test]
fn sweep_and_diagnose_write_their_reports() {
    let env = Env::new();
    // a planted-model-sized direction: the toy model has d = 32
    let mut v = vec![0.0; 32];
    v[0] = 1.0;
    SteeringDirection::from_vector(2, &v)
        .unwrap()
        .save(Path::new(&env.p("v.json")))
        .unwrap();
    let o = run(&[
        "sweep",
        "--direction",
        &env.p("v.json"),
        "--alpha-grid",
        "0:1:0.5",
        "--prompts",
        "4",
        "--out",
        &env.p("s"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(env.p("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("alpha,provenance,mean_length,mean_wait,accuracy_proxy,n_prompts\n"));
    let o = run(&[
        "sweep",
        "--direction",
        &env.p("v.json"),
        "--alpha-grid",
        "0.5:1:0.5",
        "--prompts",
        "4",
        "--out",
        &env.p("s"),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = run(&[
        "sweep",
        "--direction",
        &env.p("v.json"),
        "--scope",
        "layers",
        "--out",
        &env.p("s"),
    ]);
    assert_eq!(code(&o), 2);
    // dimension mismatch with the model
    SteeringDirection::from_vector(0, &[1.0, 0.0, 0.0])
        .unwrap()
        .save(Path::new(&env.p("small.json")))
        .unwrap();
    let o = run(&[
        "sweep",
        "--direction",
        &env.p("small.json"),
        "--prompts",
        "2",
        "--out",
        &env.p("s"),
    ]);
    assert_eq!(code(&o), 3);

    let o = run(&[
        "diagnose",
        "--direction",
        &env.p("v.json"),
        "--prompts",
        "4",
        "--out",
        &env.p("g"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = read_json(&env.p("g/shift_report.json"));
    assert_eq!(rep["intervened_layer"], 2);
    assert_eq!(rep["sigma_min_mlp"].as_array().unwrap().len(), 4);
    let o = run(&[
        "diagnose",
        "--direction",
        &env.p("v.json"),
        "--gamma",
        "1.0",
        "--out",
        &env.p("g"),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn demo_is_byte_identical_across_runs() {
    let env = Env::new();
    for out in ["d1", "d2"] {
        let o = run(&["demo", "--seed", "0", "--out", &env.p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<String> = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for e in fs::read_dir(env.root.join("d1").join(&rel)).unwrap() {
            let e = e.unwrap();
            let r = rel.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                stack.push(r);
            } else {
                names.push(r.to_string_lossy().into_owned());
            }
        }
    }
    assert!(names.iter().any(|n| n.ends_with(".csv")));
    for n in &names {
        let a = fs::read(env.root.join("d1").join(n)).unwrap();
        let b = fs::read(env.root.join("d2").join(n)).expect("same file set");
        if n == "run_manifest.json" {
            // identical apart from the wall clock
            let strip = |bytes: &[u8]| {
                let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_clock_seconds");
                v
            };
            assert_eq!(strip(&a), strip(&b));
        } else {
            assert!(a == b, "{n} differs between runs");
        }
    }

    // behavioural layer selection on the demo's own corpus and model
    let o = run(&[
        "extract",
        "--asf",
        &env.p("d1/asf"),
        "--auto",
        "--select",
        "behavioral",
        "--model",
        &env.p("d1/model"),
        "--select-prompts",
        "20",
        "--out",
        &env.p("b"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(env.p("b/behavioral_scores.csv")).unwrap();
    let selected: Vec<usize> = csv
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",true"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(selected.len(), 1, "{csv}");
    let dir = SteeringDirection::load(Path::new(&env.p("b/direction.json"))).unwrap();
    assert_eq!(dir.layer, selected[0]);
}

#[test]
fn behavioral_selection_needs_auto_and_a_matching_model() {
    let env = Env::new();
    let o = run(&[
        "extract",
        "--asf",
        &env.p("asf"),
        "--layer",
        "1",
        "--select",
        "behavioral",
        "--out",
        &env.p("o"),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // the fixture has d = 6 but the planted model has d = 32
    let o = run(&[
        "extract",
        "--asf",
        &env.p("asf"),
        "--auto",
        "--select",
        "behavioral",
        "--select-prompts",
        "2",
        "--out",
        &env.p("o"),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
