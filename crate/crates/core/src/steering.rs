// SPDX-License-Identifier: MIT OR Apache-2.0

//! Directional ablation during generation, α-sweeps and reverse steering.
//!
//! The intervention removes (forward sign) or amplifies (reverse sign) the
//! component of every block output along a unit direction `r`:
//!
//! ```text
//! h' = h ∓ α · r (rᵀh)
//! ```
//!
//! The projection is computed in 64-bit and cast back to the 32-bit stream.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direction::{fmt17, Provenance, SteeringDirection};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::SeedTree;
use crate::toymodel::corpus::Prompt;
use crate::toymodel::tokens::{self, EOS, EQ};
use crate::toymodel::{GenerationTrace, Hook, Sampling, ToyModel};

/// Which block outputs are intervened on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerScope {
    #[default]
    AllLayers,
    Layer(usize),
}

impl LayerScope {
    pub fn includes(&self, layer: usize) -> bool {
        match self {
            LayerScope::AllLayers => true,
            LayerScope::Layer(l) => *l == layer,
        }
    }
}

/// Remove (`Forward`) or add (`Reverse`) the directional component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    #[default]
    Forward,
    Reverse,
}

/// Which token positions are intervened on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScope {
    Prompt,
    Generated,
    #[default]
    Both,
}

/// One intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionConfig {
    pub direction: SteeringDirection,
    pub alpha: f64,
    pub scope: LayerScope,
    pub sign: Sign,
    pub positions: PositionScope,
}

impl InterventionConfig {
    pub fn new(direction: SteeringDirection, alpha: f64) -> Self {
        InterventionConfig {
            direction,
            alpha,
            scope: LayerScope::AllLayers,
            sign: Sign::Forward,
            positions: PositionScope::Both,
        }
    }

    /// Signed coefficient `c` with `h' = h − c · r (rᵀh)`.
    pub fn coefficient(&self) -> f64 {
        match self.sign {
            Sign::Forward => self.alpha,
            Sign::Reverse => -self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be finite, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `h − coef · r (rᵀh)` in 64-bit.
pub fn ablate_with(h: &[f64], r: &[f64], coef: f64) -> Result<Vec<f64>> {
    if h.len() != r.len() {
        return Err(Error::InvalidInput(format!(
            "activation has d={} but direction has d={}",
            h.len(),
            r.len()
        )));
    }
    let p = coef * dot(r, h);
    Ok(h.iter().zip(r).map(|(x, ri)| x - p * ri).collect())
}

/// Apply the intervention of `cfg` to one activation vector.
pub fn ablate(h: &[f64], cfg: &InterventionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    ablate_with(h, &cfg.direction.vector, cfg.coefficient())
}

/// In-place version on a 32-bit activation (64-bit arithmetic).
pub fn ablate_f32(h: &mut [f32], r: &[f64], coef: f64) {
    let p = coef * h.iter().zip(r).map(|(&x, &ri)| f64::from(x) * ri).sum::<f64>();
    for (x, &ri) in h.iter_mut().zip(r) {
        *x = (f64::from(*x) - p * ri) as f32;
    }
}

/// The generation hook realising an [`InterventionConfig`] for a prompt of
/// length `prompt_len`.
pub struct SteeringHook<'a> {
    r: &'a [f64],
    coef: f64,
    scope: LayerScope,
    positions: PositionScope,
    prompt_len: usize,
}

impl<'a> SteeringHook<'a> {
    pub fn new(cfg: &'a InterventionConfig, prompt_len: usize) -> Self {
        SteeringHook {
            r: &cfg.direction.vector,
            coef: cfg.coefficient(),
            scope: cfg.scope,
            positions: cfg.positions,
            prompt_len,
        }
    }
}

impl Hook for SteeringHook<'_> {
    fn apply(&self, layer: usize, pos: usize, h: &mut [f32]) {
        if self.coef == 0.0 || !self.scope.includes(layer) {
            return;
        }
        let in_prompt = pos < self.prompt_len;
        let active = match self.positions {
            PositionScope::Both => true,
            PositionScope::Prompt => in_prompt,
            PositionScope::Generated => !in_prompt,
        };
        if active {
            ablate_f32(h, self.r, self.coef);
        }
    }
}

/// Generate with the intervention applied.
pub fn steered_generate(
    model: &ToyModel,
    prompt: &[u32],
    cfg: &InterventionConfig,
    sampling: Sampling,
) -> Result<GenerationTrace> {
    cfg.validate()?;
    if cfg.direction.d() != model.d() {
        return Err(Error::Validation(format!(
            "direction has d={} but model has d={}",
            cfg.direction.d(),
            model.d()
        )));
    }
    if let LayerScope::Layer(l) = cfg.scope {
        if l >= model.layers() {
            return Err(Error::Validation(format!(
                "scope layer {l} out of range for {} layers",
                model.layers()
            )));
        }
    }
    let hook = SteeringHook::new(cfg, prompt.len());
    model.generate(prompt, sampling, Some(&hook))
}

/// Decoding settings for sweeps: greedy, or temperature sampling where prompt
/// `i` uses seed `seed.index(i)` at every α (common random numbers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepSampling {
    Greedy,
    Temperature { tau: f64, seed: SeedTree },
}

impl SweepSampling {
    fn for_prompt(&self, i: usize) -> Sampling {
        match *self {
            SweepSampling::Greedy => Sampling::Greedy,
            SweepSampling::Temperature { tau, seed } => Sampling::Temperature {
                tau,
                seed: seed.index(i as u64).seed(),
            },
        }
    }
}

/// Intervention settings shared by every row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub scope: LayerScope,
    pub sign: Sign,
    pub positions: PositionScope,
}

/// One α of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub provenance: Provenance,
    pub sign: Sign,
    /// Mean number of generated tokens (EOS included, prompt excluded).
    pub mean_length: f64,
    pub mean_wait: f64,
    /// Fraction of prompts whose first generated digit equals the target.
    pub accuracy_proxy: f64,
    pub n_prompts: usize,
}

/// Rows of a sweep, in α order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,provenance,mean_length,mean_wait,accuracy_proxy,n_prompts\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_alpha(r.alpha),
                r.provenance.as_str(),
                fmt17(r.mean_length),
                fmt17(r.mean_wait),
                fmt17(r.accuracy_proxy),
                r.n_prompts
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep rows serialise") + "\n"
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_length).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.alpha).collect()
    }
}

/// Compact α formatting (`0.3`, not `3.0000000000000004e-1`).
pub fn fmt_alpha(a: f64) -> String {
    let r = (a * 1e9).round() / 1e9;
    format!("{r}")
}

/// The answer token: first generated digit.
fn answer(trace: &GenerationTrace) -> Option<u32> {
    trace.generated().iter().copied().find(|&t| tokens::is_digit(t))
}

/// Per-prompt metrics of one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptMetrics {
    pub generated: usize,
    pub waits: usize,
    pub correct: bool,
}

fn metrics(trace: &GenerationTrace, prompt: &Prompt) -> PromptMetrics {
    PromptMetrics {
        generated: trace.generated_len(),
        waits: trace.wait_count,
        correct: answer(trace) == Some(prompt.target),
    }
}

/// `α = a, a+s, …, ≤ b` with values rounded to 1e−9 so grids like
/// `0:2:0.1` hit their end points exactly.
pub fn alpha_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::InvalidInput(format!("invalid alpha grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Default grid `0, 0.1, …, 2.0`.
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(0.0, 2.0, 0.1).expect("static grid")
}

/// Run every prompt at every α and average the metrics per α. The grid must
/// contain the α = 0 baseline.
///
/// `(α, prompt)` pairs are evaluated in parallel and merged in fixed
/// `(α, prompt)` order.
pub fn alpha_sweep(
    model: &ToyModel,
    prompts: &[Prompt],
    direction: &SteeringDirection,
    alphas: &[f64],
    sampling: SweepSampling,
    opts: SweepOptions,
) -> Result<SweepResult> {
    if !alphas.contains(&0.0) {
        return Err(Error::InvalidInput(
            "alpha grid must include the alpha=0 baseline".into(),
        ));
    }
    sweep_at(model, prompts, direction, alphas, sampling, opts)
}

/// [`alpha_sweep`] without the baseline requirement, for single-α reports.
pub fn sweep_at(
    model: &ToyModel,
    prompts: &[Prompt],
    direction: &SteeringDirection,
    alphas: &[f64],
    sampling: SweepSampling,
    opts: SweepOptions,
) -> Result<SweepResult> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one prompt".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one alpha".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..prompts.len()).map(move |p| (a, p)))
        .collect();
    let per: Vec<Result<PromptMetrics>> = pairs
        .par_iter()
        .map(|&(a, p)| {
            let cfg = InterventionConfig {
                direction: direction.clone(),
                alpha: alphas[a],
                scope: opts.scope,
                sign: opts.sign,
                positions: opts.positions,
            };
            let t = steered_generate(model, &prompts[p].tokens, &cfg, sampling.for_prompt(p))?;
            Ok(metrics(&t, &prompts[p]))
        })
        .collect();
    let mut rows = Vec::with_capacity(alphas.len());
    let n = prompts.len();
    let mut it = per.into_iter();
    for &alpha in alphas {
        let (mut len, mut wait, mut acc) = (0usize, 0usize, 0usize);
        for _ in 0..n {
            let m = it.next().expect("one result per pair")?;
            len += m.generated;
            wait += m.waits;
            acc += usize::from(m.correct);
        }
        rows.push(SweepRow {
            alpha,
            provenance: direction.provenance,
            sign: opts.sign,
            mean_length: len as f64 / n as f64,
            mean_wait: wait as f64 / n as f64,
            accuracy_proxy: acc as f64 / n as f64,
            n_prompts: n,
        });
    }
    Ok(SweepResult { rows })
}

/// Reverse-sign steering at one α, reported as a sweep row.
pub fn reverse_steer_demo(
    model: &ToyModel,
    prompts: &[Prompt],
    direction: &SteeringDirection,
    alpha: f64,
    sampling: SweepSampling,
    scope: LayerScope,
) -> Result<SweepRow> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "reverse steering needs alpha >= 0, got {alpha}"
        )));
    }
    let opts = SweepOptions {
        scope,
        sign: Sign::Reverse,
        positions: PositionScope::Both,
    };
    let mut r = sweep_at(model, prompts, direction, &[alpha], sampling, opts)?;
    Ok(r.rows.remove(0))
}

/// Behavioural score of one candidate layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehavioralScore {
    pub layer: usize,
    pub steered_length: f64,
    /// `1 − steered / baseline` mean generated length.
    pub reduction: f64,
    pub selected: bool,
}

/// Layer selection by token reduction: each candidate direction is applied
/// at one α and the layer whose direction shortens generations most is
/// selected (ties go to the lower layer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehavioralScoreTable {
    pub alpha: f64,
    pub baseline_length: f64,
    pub rows: Vec<BehavioralScore>,
}

impl BehavioralScoreTable {
    pub fn selected(&self) -> usize {
        self.rows
            .iter()
            .find(|r| r.selected)
            .map(|r| r.layer)
            .expect("score table always has a selected layer")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,alpha,baseline_length,steered_length,reduction,selected\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.layer,
                fmt_alpha(self.alpha),
                fmt17(self.baseline_length),
                fmt17(r.steered_length),
                fmt17(r.reduction),
                r.selected
            ));
        }
        s
    }
}

/// Score every direction in `directions` (one per candidate layer) by the
/// mean-length reduction it achieves at `alpha` on `prompts`.
pub fn behavioral_layer_scores(
    model: &ToyModel,
    prompts: &[Prompt],
    directions: &[SteeringDirection],
    alpha: f64,
    sampling: SweepSampling,
    opts: SweepOptions,
) -> Result<BehavioralScoreTable> {
    if directions.is_empty() {
        return Err(Error::InvalidInput(
            "behavioural selection needs at least one direction".into(),
        ));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "behavioural selection needs alpha > 0, got {alpha}"
        )));
    }
    // α = 0 is the identity, so any direction gives the baseline
    let baseline = sweep_at(model, prompts, &directions[0], &[0.0], sampling, opts)?.rows[0].mean_length;
    let mut rows = Vec::with_capacity(directions.len());
    for dir in directions {
        let steered = sweep_at(model, prompts, dir, &[alpha], sampling, opts)?.rows[0].mean_length;
        let reduction = if baseline > 0.0 { 1.0 - steered / baseline } else { 0.0 };
        rows.push(BehavioralScore {
            layer: dir.layer,
            steered_length: steered,
            reduction,
            selected: false,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.reduction > rows[best].reduction {
            best = i;
        }
    }
    rows[best].selected = true;
    Ok(BehavioralScoreTable {
        alpha,
        baseline_length: baseline,
        rows,
    })
}

/// Was the answer position reached at all (an `=` followed by a digit)?
pub fn answered(trace: &GenerationTrace) -> bool {
    trace.tokens.contains(&EQ) && trace.generated().iter().any(|&t| tokens::is_digit(t) || t == EOS)
}
