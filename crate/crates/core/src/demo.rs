// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end pipeline on the planted toy model.
//!
//! model → contrastive corpus (ASF) → layer scores → raw direction →
//! manifold → projected direction → noise report → raw vs projected α-sweeps
//! → reverse steering → shift report. Every stage draws from its own
//! substream of the root seed, so outputs are a pure function of the
//! configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::amplification::{amplification_report, ShiftReport};
use crate::asf::write_asf;
use crate::direction::{
    effective_class_sizes, extract_direction, fmt17, score_layers, ExtractConfig, LayerScoreTable, SteeringDirection,
};
use crate::error::{Error, Result};
use crate::linalg::{covariance, dot, norm};
use crate::manifold::{
    fit_manifold, noise_norm, population_matrix, project_direction, spectrum_csv, write_basis, CovPopulation, KPolicy,
    ManifoldBasis, NoiseReport, DEFAULT_MC_RESAMPLES, RESIDUAL_TOL,
};
use crate::rng::SeedTree;
use crate::steering::{
    alpha_grid, alpha_sweep, default_alpha_grid, fmt_alpha, reverse_steer_demo, sweep_at, LayerScope, PositionScope,
    Sign, SweepOptions, SweepResult, SweepRow, SweepSampling,
};
use crate::toymodel::corpus::{eval_prompts, synth_corpus, CorpusConfig};
use crate::toymodel::io::save_model;
use crate::toymodel::{build_model_with, InitConfig, PlantedDirection, ToyModel, ToyModelConfig};

/// Everything the demo needs; [`DemoConfig::new`] gives the reference run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub model: ToyModelConfig,
    pub init: InitConfig,
    pub planted_layer: usize,
    pub planted_gain: f64,
    pub corpus: CorpusConfig,
    /// `None` selects the layer by Fisher score.
    pub layer: Option<usize>,
    pub k_policy: KPolicy,
    pub population: CovPopulation,
    pub mc_resamples: usize,
    pub n_eval: usize,
    pub alphas: Vec<f64>,
    pub sweep_temperature: f64,
    pub scope: LayerScope,
    pub reverse_alpha: f64,
    pub n_probes: usize,
}

impl DemoConfig {
    pub fn new(seed: u64) -> Self {
        DemoConfig {
            seed,
            model: ToyModelConfig {
                seed,
                ..ToyModelConfig::default()
            },
            init: InitConfig::default(),
            planted_layer: 2,
            planted_gain: 0.5,
            corpus: CorpusConfig::default(),
            layer: None,
            k_policy: KPolicy::default(),
            population: CovPopulation::Union,
            mc_resamples: DEFAULT_MC_RESAMPLES,
            n_eval: 100,
            alphas: default_alpha_grid(),
            sweep_temperature: 0.6,
            scope: LayerScope::AllLayers,
            reverse_alpha: 1.0,
            n_probes: 64,
        }
    }
}

/// Pipeline invariants checked at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoChecks {
    /// `‖(I − P_M) r_projected‖₂`.
    pub projected_residual: f64,
    pub residual_ok: bool,
    pub cos_raw_planted: f64,
    pub cos_projected_planted: f64,
    /// Mean generated length at α=0 and the projected sweep's minimum.
    pub baseline_length: f64,
    pub projected_best_length: f64,
    pub projected_best_alpha: f64,
    pub raw_best_length: f64,
    pub raw_best_alpha: f64,
    pub forward_wait_at_reverse_alpha: f64,
    pub reverse_wait_at_reverse_alpha: f64,
}

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub model: ToyModel,
    pub layer_scores: LayerScoreTable,
    pub raw: SteeringDirection,
    pub basis: ManifoldBasis,
    pub projected: SteeringDirection,
    pub noise: NoiseReport,
    pub sweep_raw: SweepResult,
    pub sweep_projected: SweepResult,
    pub forward_row: SweepRow,
    pub reverse_row: SweepRow,
    pub shift: ShiftReport,
    pub checks: DemoChecks,
    pub corpus_attempts: usize,
    /// Files written, relative to the output directory, in write order.
    pub outputs: Vec<PathBuf>,
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<PathBuf>,
}

impl Writer<'_> {
    fn text(&mut self, rel: &str, body: &str) -> Result<()> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        self.outputs.push(PathBuf::from(rel));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(v).map_err(|e| Error::Validation(format!("cannot encode {rel}: {e}")))?;
        self.text(rel, &(s + "\n"))
    }

    fn record(&mut self, rel: &str) {
        self.outputs.push(PathBuf::from(rel));
    }
}

fn forward_reverse_csv(rows: &[&SweepRow]) -> String {
    let mut s = String::from("alpha,sign,provenance,mean_length,mean_wait,accuracy_proxy,n_prompts\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_alpha(r.alpha),
            match r.sign {
                Sign::Forward => "forward",
                Sign::Reverse => "reverse",
            },
            r.provenance.as_str(),
            fmt17(r.mean_length),
            fmt17(r.mean_wait),
            fmt17(r.accuracy_proxy),
            r.n_prompts
        ));
    }
    s
}

/// Run the pipeline and write its artifacts under `out`.
pub fn run_demo(cfg: &DemoConfig, out: &Path) -> Result<DemoOutcome> {
    let root = SeedTree::new(cfg.seed);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut w = Writer {
        dir: out,
        outputs: Vec::new(),
    };

    // model
    let planted = PlantedDirection::random(&cfg.model, cfg.planted_layer, cfg.planted_gain);
    let model = stage("model", build_model_with(&cfg.model, &planted, &cfg.init))?;
    stage("model", save_model(&model, &out.join("model")))?;
    w.record("model/model.json");
    w.record("model/weights.bin");

    // corpus
    let corpus = stage("corpus", synth_corpus(&model, &cfg.corpus, root.child("corpus")))?;
    let manifest = stage("corpus", write_asf(&corpus.set, &out.join("asf")))?;
    w.record("asf/manifest.json");
    w.record("asf/labels.json");
    for l in &manifest.layers {
        w.record(&format!("asf/{}", crate::asf::layer_file_name(*l)));
    }

    // extraction
    let scores = stage("extract", score_layers(&corpus.set))?;
    w.text("layer_scores.csv", &scores.to_csv())?;
    let layer = match cfg.layer {
        Some(l) => l,
        None => scores.selected(),
    };
    let ecfg = ExtractConfig::default();
    let raw = stage(
        "extract",
        extract_direction(&corpus.set, layer, &ecfg, root.child("extract")),
    )?;
    w.text("direction_raw.json", &raw.to_json())?;

    // manifold and projection
    let samples = stage("manifold", population_matrix(&corpus.set, layer, cfg.population))?;
    let basis = stage("manifold", fit_manifold(&samples, layer, cfg.k_policy))?;
    stage("manifold", write_basis(&basis, &out.join("basis")))?;
    w.record("basis/basis.json");
    w.record("basis/basis.bin");
    w.text("spectrum.csv", &spectrum_csv(&basis))?;
    let projected = stage("project", project_direction(&raw, &basis))?;
    w.text("direction_projected.json", &projected.to_json())?;
    let residual = norm(&basis.residual(&projected.vector)?);

    // noise: class sizes as used by the estimator (budget, then filtering)
    let (n_red, n_con) = effective_class_sizes(&corpus.set, &ecfg);
    let cov = stage("noise", covariance(&samples))?;
    let mut noise = stage(
        "noise",
        noise_norm(&basis, &cov, n_red, n_con, cfg.mc_resamples, root.child("noise")),
    )?;
    noise.covariance_population = Some(cfg.population);
    w.json("noise.json", &noise)?;
    w.text("noise.csv", &noise.to_csv())?;

    // sweeps
    let prompts = eval_prompts(cfg.n_eval, root.child("eval"));
    let sampling = SweepSampling::Temperature {
        tau: cfg.sweep_temperature,
        seed: root.child("sweep"),
    };
    let opts = SweepOptions {
        scope: cfg.scope,
        sign: Sign::Forward,
        positions: PositionScope::Both,
    };
    let sweep_raw = stage(
        "sweep",
        alpha_sweep(&model, &prompts, &raw, &cfg.alphas, sampling, opts),
    )?;
    let sweep_projected = stage(
        "sweep",
        alpha_sweep(&model, &prompts, &projected, &cfg.alphas, sampling, opts),
    )?;
    w.text("sweep_raw.csv", &sweep_raw.to_csv())?;
    w.text("sweep_projected.csv", &sweep_projected.to_csv())?;
    let both = SweepResult {
        rows: sweep_raw.rows.iter().chain(&sweep_projected.rows).cloned().collect(),
    };
    w.text("sweep.csv", &both.to_csv())?;
    w.text("sweep.json", &both.to_json())?;

    // reverse steering at matched α
    let ropts = SweepOptions { ..opts };
    let forward_row = stage(
        "reverse",
        sweep_at(&model, &prompts, &projected, &[cfg.reverse_alpha], sampling, ropts),
    )?
    .rows
    .remove(0);
    let reverse_row = stage(
        "reverse",
        reverse_steer_demo(&model, &prompts, &projected, cfg.reverse_alpha, sampling, cfg.scope),
    )?;
    w.text("reverse.csv", &forward_reverse_csv(&[&forward_row, &reverse_row]))?;

    // shift report at the extraction layer
    let probes: Vec<Vec<u32>> = prompts.iter().take(cfg.n_probes).map(|p| p.tokens.clone()).collect();
    let shift_alphas = alpha_grid(0.0, 1.0, 0.1)?;
    let shift = stage(
        "diagnose",
        amplification_report(&model, &projected, &shift_alphas, &probes, None, Some(&basis)),
    )?;
    w.text("shift_report.json", &shift.to_json())?;
    w.text("shift_report.csv", &shift.to_csv())?;

    let lr = sweep_raw.lengths();
    let lp = sweep_projected.lengths();
    let (ir, ip) = (argmin(&lr), argmin(&lp));
    let checks = DemoChecks {
        projected_residual: residual,
        residual_ok: residual <= RESIDUAL_TOL,
        cos_raw_planted: cos(&raw.vector, &planted.vector),
        cos_projected_planted: cos(&projected.vector, &planted.vector),
        baseline_length: lp[0],
        projected_best_length: lp[ip],
        projected_best_alpha: cfg.alphas[ip],
        raw_best_length: lr[ir],
        raw_best_alpha: cfg.alphas[ir],
        forward_wait_at_reverse_alpha: forward_row.mean_wait,
        reverse_wait_at_reverse_alpha: reverse_row.mean_wait,
    };
    #[derive(Serialize)]
    struct Summary<'a> {
        layer: usize,
        k: usize,
        corpus_attempts: usize,
        checks: &'a DemoChecks,
    }
    w.json(
        "summary.json",
        &Summary {
            layer,
            k: basis.k,
            corpus_attempts: corpus.attempts,
            checks: &checks,
        },
    )?;
    if !checks.residual_ok {
        return Err(Error::NumericalFailure(format!(
            "project: residual {residual:e} exceeds {RESIDUAL_TOL:e}"
        )));
    }
    Ok(DemoOutcome {
        model,
        layer_scores: scores,
        raw,
        basis,
        projected,
        noise,
        sweep_raw,
        sweep_projected,
        forward_row,
        reverse_row,
        shift,
        checks,
        corpus_attempts: corpus.attempts,
        outputs: w.outputs,
    })
}
