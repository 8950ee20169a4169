// SPDX-License-Identifier: MIT OR Apache-2.0

//! `steerkit` command-line entry point.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use steerkit_core::amplification::{amplification_report, AmplificationConstants};
use steerkit_core::asf::read_asf;
use steerkit_core::demo::{run_demo, DemoConfig};
use steerkit_core::direction::{
    effective_class_sizes, extract_direction, score_layers, ExtractConfig, SteeringDirection,
};
use steerkit_core::iforest::{OutlierConfig, OutlierMethod};
use steerkit_core::linalg::{covariance, norm};
use steerkit_core::manifold::{
    fit_manifold, noise_norm, population_matrix, project_direction, read_basis, spectrum_csv, write_basis,
    CovPopulation, KPolicy, DEFAULT_K_CAP, DEFAULT_MC_RESAMPLES, DEFAULT_VAR_TARGET,
};
use steerkit_core::steering::{
    alpha_grid, alpha_sweep, behavioral_layer_scores, LayerScope, PositionScope, Sign, SweepOptions, SweepSampling,
};
use steerkit_core::toymodel::corpus::eval_prompts;
use steerkit_core::toymodel::io::load_model;
use steerkit_core::toymodel::{build_model, PlantedDirection, ToyModel, ToyModelConfig};
use steerkit_core::{Error, ErrorKind, SeedTree};

use manifest::RunManifest;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_BUDGET: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "steerkit",
    version,
    about = "Steering-vector extraction, manifold projection and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the whole pipeline on the planted toy model.
    Demo(DemoArgs),
    /// Extract a raw difference-in-means direction from an ASF directory.
    Extract(ExtractArgs),
    /// Fit the activation manifold (PCA basis) at one layer.
    Manifold(ManifoldArgs),
    /// Project a direction onto a manifold basis.
    Project(ProjectArgs),
    /// Closed-form and Monte-Carlo interference noise of a basis.
    Noise(NoiseArgs),
    /// α-sweep of a direction on the toy model.
    Sweep(SweepArgs),
    /// Per-layer mean-shift and amplification report.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Root seed; every stage derives its own substream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct LayerChoice {
    /// Layer to use.
    #[arg(long)]
    layer: Option<usize>,
    /// Pick the layer with the highest Fisher score.
    #[arg(long)]
    auto: bool,
}

#[derive(Args, Debug)]
struct KChoice {
    /// Fixed number of principal components.
    #[arg(long, conflicts_with = "var_target")]
    k: Option<usize>,
    /// Smallest k whose variance ratio reaches this target (default 0.70).
    #[arg(long)]
    var_target: Option<f64>,
    /// Cap on k under the variance-target policy.
    #[arg(long, default_value_t = DEFAULT_K_CAP)]
    k_cap: usize,
}

impl KChoice {
    fn policy(&self) -> KPolicy {
        match self.k {
            Some(k) => KPolicy::Fixed(k),
            None => KPolicy::VarianceTarget {
                target: self.var_target.unwrap_or(DEFAULT_VAR_TARGET),
                cap: self.k_cap,
            },
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Population {
    Union,
    RedundantOnly,
}

impl From<Population> for CovPopulation {
    fn from(p: Population) -> Self {
        match p {
            Population::Union => CovPopulation::Union,
            Population::RedundantOnly => CovPopulation::RedundantOnly,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Outliers {
    IsolationForest,
    Mad,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SignArg {
    Forward,
    Reverse,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Positions {
    Prompt,
    Generated,
    Both,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    common: Common,
    /// Monte-Carlo resamples for the noise report (0 = analytic only).
    #[arg(long, default_value_t = DEFAULT_MC_RESAMPLES)]
    mc: usize,
    /// Evaluation prompts per α.
    #[arg(long, default_value_t = 100)]
    prompts: usize,
    /// α grid `A:B:S`.
    #[arg(long, default_value = "0:2:0.1")]
    alpha_grid: String,
    /// Minimum WAIT count of a redundant sample.
    #[arg(long)]
    threshold_w: Option<usize>,
    /// Corpus generation attempts before giving up.
    #[arg(long)]
    max_attempts: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    asf: PathBuf,
    #[command(flatten)]
    layer: LayerChoice,
    /// Samples drawn per class before filtering (0 = all).
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, value_enum, default_value_t = Outliers::IsolationForest)]
    outliers: Outliers,
    #[arg(long, default_value_t = 0.10)]
    contamination: f64,
    /// How `--auto` picks the layer.
    #[arg(long, value_enum, default_value_t = Select::Fisher)]
    select: Select,
    #[command(flatten)]
    model: ModelChoice,
    /// Evaluation prompts for `--select behavioral`.
    #[arg(long, default_value_t = 50)]
    select_prompts: usize,
    /// α at which `--select behavioral` compares layers.
    #[arg(long, default_value_t = 1.0)]
    select_alpha: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Select {
    /// Fisher separation score on the activations.
    Fisher,
    /// Token reduction of each layer's direction on the toy model.
    Behavioral,
}

#[derive(Args, Debug)]
struct ManifoldArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    asf: PathBuf,
    #[command(flatten)]
    layer: LayerChoice,
    #[command(flatten)]
    k: KChoice,
    #[arg(long, value_enum, default_value_t = Population::Union)]
    population: Population,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    direction: PathBuf,
    /// Basis manifest (`basis.json`).
    #[arg(long)]
    basis: PathBuf,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    asf: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// Monte-Carlo resamples (0 = analytic only).
    #[arg(long, default_value_t = DEFAULT_MC_RESAMPLES)]
    mc: usize,
    #[arg(long, value_enum, default_value_t = Population::Union)]
    population: Population,
    /// Redundant class size (default: the size the extractor uses).
    #[arg(long)]
    n_red: Option<usize>,
    /// Concise class size (default: the size the extractor uses).
    #[arg(long)]
    n_con: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelChoice {
    /// Saved toy model directory; without it the planted model of `--seed`
    /// is rebuilt.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelChoice,
    #[arg(long)]
    direction: PathBuf,
    #[arg(long, default_value = "0:2:0.1")]
    alpha_grid: String,
    /// `all` or `layer:L`.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long, value_enum, default_value_t = SignArg::Forward)]
    sign: SignArg,
    #[arg(long, value_enum, default_value_t = Positions::Both)]
    positions: Positions,
    #[arg(long, default_value_t = 100)]
    prompts: usize,
    /// Sampling temperature (0 = greedy).
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelChoice,
    #[arg(long)]
    direction: PathBuf,
    /// Basis manifest; needed for the bound's off-manifold term.
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long, default_value = "0:1:0.1")]
    alpha_grid: String,
    #[arg(long, default_value_t = 64)]
    prompts: usize,
    #[arg(long, requires_all = ["gamma_attn", "gamma_sigma"])]
    gamma: Option<f64>,
    #[arg(long, requires_all = ["gamma", "gamma_sigma"])]
    gamma_attn: Option<f64>,
    #[arg(long, requires_all = ["gamma", "gamma_attn"])]
    gamma_sigma: Option<f64>,
}

/// Failure of a command: either a usage problem or a toolkit error.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<RunManifest, Failure>;

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation | ErrorKind::CorruptData | ErrorKind::Io | ErrorKind::InvalidInput => EXIT_VALIDATION,
        ErrorKind::NumericalFailure | ErrorKind::DegenerateInput => EXIT_NUMERICAL,
        ErrorKind::GenerationBudgetExceeded => EXIT_BUDGET,
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Failure::Usage(format!("--alpha-grid expects A:B:S, got {s:?}")));
    }
    let mut v = [0.0; 3];
    for (o, p) in v.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("--alpha-grid: {p:?} is not a number")))?;
    }
    alpha_grid(v[0], v[1], v[2]).map_err(|e| Failure::Usage(format!("--alpha-grid: {e}")))
}

fn parse_scope(s: &str) -> Result<LayerScope, Failure> {
    if s == "all" {
        return Ok(LayerScope::AllLayers);
    }
    s.strip_prefix("layer:")
        .and_then(|l| l.parse().ok())
        .map(LayerScope::Layer)
        .ok_or_else(|| Failure::Usage(format!("--scope expects all or layer:L, got {s:?}")))
}

fn prepare_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Core(Error::io(out, e)))
}

fn write(out: &Path, rel: &str, body: &str, m: &mut RunManifest) -> Result<(), Failure> {
    let p = out.join(rel);
    fs::write(&p, body).map_err(|e| Failure::Core(Error::io(&p, e)))?;
    m.outputs.push(rel.to_string());
    Ok(())
}

fn select_layer(set: &steerkit_core::asf::ActivationSet, choice: &LayerChoice) -> Result<usize, Failure> {
    Ok(match choice.layer {
        Some(l) => l,
        None => score_layers(set)?.selected(),
    })
}

fn open_model(choice: &ModelChoice, seed: u64, m: &mut RunManifest) -> Result<ToyModel, Failure> {
    match &choice.model {
        Some(dir) => {
            m.add_input(dir)?;
            Ok(load_model(dir)?)
        }
        None => {
            let demo = DemoConfig::new(seed);
            let cfg = ToyModelConfig { seed, ..demo.model };
            let planted = PlantedDirection::random(&cfg, demo.planted_layer, demo.planted_gain);
            Ok(build_model(&cfg, &planted)?)
        }
    }
}

fn cmd_demo(a: &DemoArgs) -> CmdResult {
    let out = &a.common.out;
    prepare_out(out)?;
    let mut cfg = DemoConfig::new(a.common.seed);
    cfg.mc_resamples = a.mc;
    cfg.n_eval = a.prompts;
    cfg.alphas = parse_grid(&a.alpha_grid)?;
    if let Some(w) = a.threshold_w {
        cfg.corpus.threshold_w = w;
    }
    if let Some(n) = a.max_attempts {
        cfg.corpus.max_attempts = n;
    }
    let mut m = RunManifest::new("demo", a.common.seed, serde_json::to_value(&cfg).expect("config"));
    let outcome = run_demo(&cfg, out)?;
    m.outputs
        .extend(outcome.outputs.iter().map(|p| p.to_string_lossy().replace('\\', "/")));
    let c = &outcome.checks;
    eprintln!(
        "demo: layer {} k {} cos(projected, planted) {:.4} residual {:.2e}; length {:.2} -> {:.2} at alpha {}",
        outcome.raw.layer,
        outcome.basis.k,
        c.cos_projected_planted,
        c.projected_residual,
        c.baseline_length,
        c.projected_best_length,
        c.projected_best_alpha
    );
    Ok(m)
}

fn cmd_extract(a: &ExtractArgs) -> CmdResult {
    let out = &a.common.out;
    let behavioral = a.select == Select::Behavioral;
    if behavioral && !a.layer.auto {
        return Err(Failure::Usage("--select behavioral requires --auto".into()));
    }
    let mut m = RunManifest::new(
        "extract",
        a.common.seed,
        json!({"layer": a.layer.layer, "auto": a.layer.auto, "budget": a.budget,
               "outliers": format!("{:?}", a.outliers), "contamination": a.contamination,
               "select": format!("{:?}", a.select).to_lowercase(),
               "select_prompts": a.select_prompts, "select_alpha": a.select_alpha}),
    );
    m.add_input(&a.asf)?;
    let set = read_asf(&a.asf)?;
    let scores = score_layers(&set)?;
    let cfg = extract_config(a.budget, a.outliers, a.contamination);
    let seed = SeedTree::new(a.common.seed).child("extract");
    let mut behavioral_csv = None;
    let layer = match a.layer.layer {
        Some(l) => l,
        None if behavioral => {
            let model = open_model(&a.model, a.common.seed, &mut m)?;
            let dirs = set
                .layer_ids()
                .into_iter()
                .map(|l| extract_direction(&set, l, &cfg, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let root = SeedTree::new(a.common.seed);
            let prompts = eval_prompts(a.select_prompts, root.child("eval"));
            let sampling = SweepSampling::Temperature {
                tau: 0.6,
                seed: root.child("select"),
            };
            let table = behavioral_layer_scores(
                &model,
                &prompts,
                &dirs,
                a.select_alpha,
                sampling,
                SweepOptions::default(),
            )?;
            behavioral_csv = Some(table.to_csv());
            table.selected()
        }
        None => scores.selected(),
    };
    let dir = extract_direction(&set, layer, &cfg, seed)?;
    prepare_out(out)?;
    write(out, "layer_scores.csv", &scores.to_csv(), &mut m)?;
    if let Some(csv) = behavioral_csv {
        write(out, "behavioral_scores.csv", &csv, &mut m)?;
    }
    write(out, "direction.json", &dir.to_json(), &mut m)?;
    eprintln!("extract: layer {layer}, prenorm {:.6}", dir.prenorm);
    Ok(m)
}

fn extract_config(budget: usize, outliers: Outliers, contamination: f64) -> ExtractConfig {
    ExtractConfig {
        budget_per_class: if budget == 0 { None } else { Some(budget) },
        outliers: OutlierConfig {
            method: match outliers {
                Outliers::IsolationForest => OutlierMethod::IsolationForest,
                Outliers::Mad => OutlierMethod::MedianMad,
                Outliers::None => OutlierMethod::None,
            },
            contamination,
            ..OutlierConfig::default()
        },
    }
}

fn cmd_manifold(a: &ManifoldArgs) -> CmdResult {
    let out = &a.common.out;
    let policy = a.k.policy();
    let mut m = RunManifest::new(
        "manifold",
        a.common.seed,
        json!({"layer": a.layer.layer, "auto": a.layer.auto, "k_policy": policy,
               "population": CovPopulation::from(a.population)}),
    );
    m.add_input(&a.asf)?;
    let set = read_asf(&a.asf)?;
    let layer = select_layer(&set, &a.layer)?;
    let samples = population_matrix(&set, layer, a.population.into())?;
    let basis = fit_manifold(&samples, layer, policy)?;
    prepare_out(out)?;
    write_basis(&basis, &out.join("basis"))?;
    m.outputs.push("basis/basis.json".into());
    m.outputs.push("basis/basis.bin".into());
    write(out, "spectrum.csv", &spectrum_csv(&basis), &mut m)?;
    eprintln!("manifold: layer {layer}, k {}", basis.k);
    Ok(m)
}

fn cmd_project(a: &ProjectArgs) -> CmdResult {
    let out = &a.common.out;
    let mut m = RunManifest::new("project", a.common.seed, json!({}));
    m.add_input(&a.direction)?;
    m.add_input(&a.basis)?;
    let dir = SteeringDirection::load(&a.direction)?;
    let basis = read_basis(&a.basis)?;
    let p = project_direction(&dir, &basis)?;
    prepare_out(out)?;
    write(out, "direction_projected.json", &p.to_json(), &mut m)?;
    let residual = norm(&basis.residual(&p.vector)?);
    eprintln!("project: k {}, residual {residual:.3e}", basis.k);
    Ok(m)
}

fn cmd_noise(a: &NoiseArgs) -> CmdResult {
    let out = &a.common.out;
    let mut m = RunManifest::new(
        "noise",
        a.common.seed,
        json!({"mc": a.mc, "population": CovPopulation::from(a.population),
               "n_red": a.n_red, "n_con": a.n_con}),
    );
    m.add_input(&a.asf)?;
    m.add_input(&a.basis)?;
    let set = read_asf(&a.asf)?;
    let basis = read_basis(&a.basis)?;
    let samples = population_matrix(&set, basis.layer, a.population.into())?;
    if samples.cols() != basis.d() {
        return Err(Error::Validation(format!(
            "{}: basis has d={} but activations have d={}",
            a.basis.display(),
            basis.d(),
            samples.cols()
        ))
        .into());
    }
    let cov = covariance(&samples)?;
    let (dr, dc) = effective_class_sizes(&set, &ExtractConfig::default());
    let mut report = noise_norm(
        &basis,
        &cov,
        a.n_red.unwrap_or(dr),
        a.n_con.unwrap_or(dc),
        a.mc,
        SeedTree::new(a.common.seed).child("noise"),
    )?;
    report.covariance_population = Some(a.population.into());
    prepare_out(out)?;
    let text = serde_json::to_string_pretty(&report).expect("noise report") + "\n";
    write(out, "noise.json", &text, &mut m)?;
    write(out, "noise.csv", &report.to_csv(), &mut m)?;
    Ok(m)
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let out = &a.common.out;
    let alphas = parse_grid(&a.alpha_grid)?;
    let scope = parse_scope(&a.scope)?;
    if !(a.temperature >= 0.0 && a.temperature.is_finite()) {
        return Err(Failure::Usage("--temperature must be >= 0".into()));
    }
    let mut m = RunManifest::new(
        "sweep",
        a.common.seed,
        json!({"alphas": alphas, "scope": scope, "sign": format!("{:?}", a.sign).to_lowercase(),
               "positions": format!("{:?}", a.positions).to_lowercase(), "prompts": a.prompts,
               "temperature": a.temperature}),
    );
    m.add_input(&a.direction)?;
    let model = open_model(&a.model, a.common.seed, &mut m)?;
    let dir = SteeringDirection::load(&a.direction)?;
    let root = SeedTree::new(a.common.seed);
    let prompts = eval_prompts(a.prompts, root.child("eval"));
    let sampling = if a.temperature == 0.0 {
        SweepSampling::Greedy
    } else {
        SweepSampling::Temperature {
            tau: a.temperature,
            seed: root.child("sweep"),
        }
    };
    let opts = SweepOptions {
        scope,
        sign: match a.sign {
            SignArg::Forward => Sign::Forward,
            SignArg::Reverse => Sign::Reverse,
        },
        positions: match a.positions {
            Positions::Prompt => PositionScope::Prompt,
            Positions::Generated => PositionScope::Generated,
            Positions::Both => PositionScope::Both,
        },
    };
    let res = alpha_sweep(&model, &prompts, &dir, &alphas, sampling, opts)?;
    prepare_out(out)?;
    write(out, "sweep.csv", &res.to_csv(), &mut m)?;
    write(out, "sweep.json", &res.to_json(), &mut m)?;
    Ok(m)
}

fn cmd_diagnose(a: &DiagnoseArgs) -> CmdResult {
    let out = &a.common.out;
    let alphas = parse_grid(&a.alpha_grid)?;
    let constants = match (a.gamma, a.gamma_attn, a.gamma_sigma) {
        (Some(gamma), Some(gamma_attn), Some(gamma_sigma)) => Some(AmplificationConstants {
            gamma,
            gamma_attn,
            gamma_sigma,
        }),
        _ => None,
    };
    let mut m = RunManifest::new(
        "diagnose",
        a.common.seed,
        json!({"alphas": alphas, "prompts": a.prompts, "constants": constants}),
    );
    m.add_input(&a.direction)?;
    let model = open_model(&a.model, a.common.seed, &mut m)?;
    let dir = SteeringDirection::load(&a.direction)?;
    let basis = match &a.basis {
        Some(p) => {
            m.add_input(p)?;
            Some(read_basis(p)?)
        }
        None => None,
    };
    let probes: Vec<Vec<u32>> = eval_prompts(a.prompts, SeedTree::new(a.common.seed).child("eval"))
        .into_iter()
        .map(|p| p.tokens)
        .collect();
    let report = amplification_report(&model, &dir, &alphas, &probes, constants, basis.as_ref())?;
    prepare_out(out)?;
    write(out, "shift_report.json", &report.to_json(), &mut m)?;
    write(out, "shift_report.csv", &report.to_csv(), &mut m)?;
    Ok(m)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("STEERKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("STEERKIT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot configure thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let started = Instant::now();
    let (result, out) = match &cli.command {
        Command::Demo(a) => (cmd_demo(a), &a.common.out),
        Command::Extract(a) => (cmd_extract(a), &a.common.out),
        Command::Manifold(a) => (cmd_manifold(a), &a.common.out),
        Command::Project(a) => (cmd_project(a), &a.common.out),
        Command::Noise(a) => (cmd_noise(a), &a.common.out),
        Command::Sweep(a) => (cmd_sweep(a), &a.common.out),
        Command::Diagnose(a) => (cmd_diagnose(a), &a.common.out),
    };
    match result {
        Ok(mut m) => {
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            if let Err(e) = m.write(out) {
                eprintln!("error: {e}");
                return ExitCode::from(exit_code(e.kind()));
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
