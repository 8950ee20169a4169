// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic arithmetic prompts and the redundant/concise contrastive corpus.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asf::{ActivationSet, SampleLabel, SetTag};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, StageRng};

use super::tokens::{BOS, EQ, PLUS, WAIT};
use super::{GenerationTrace, Sampling, ToyModel};

/// A prompt with the answer digit its sum implies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    /// `(Σ operands) mod 10`.
    pub target: u32,
}

/// `<bos> a + b (+ c (+ d)) =` with 2–4 single-digit operands.
pub fn random_prompt(rng: &mut StageRng) -> Prompt {
    let n = rng.random_range(2..=4);
    let mut tokens = vec![BOS];
    let mut sum = 0;
    for i in 0..n {
        let a: u32 = rng.random_range(0..10);
        sum += a;
        tokens.push(a);
        if i + 1 < n {
            tokens.push(PLUS);
        }
    }
    tokens.push(EQ);
    Prompt {
        tokens,
        target: sum % 10,
    }
}

/// `n` evaluation prompts drawn from `seed`.
pub fn eval_prompts(n: usize, seed: SeedTree) -> Vec<Prompt> {
    let mut rng = seed.rng();
    (0..n).map(|_| random_prompt(&mut rng)).collect()
}

/// Selection rules for the contrastive corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_red: usize,
    pub n_con: usize,
    /// Minimum WAIT count for a redundant sample.
    pub threshold_w: usize,
    /// Minimum trace length (tokens, prompt included) for a redundant sample.
    pub threshold_long: usize,
    /// Maximum trace length for a concise sample.
    pub threshold_short: usize,
    pub temperature: f64,
    /// Generation attempts before giving up.
    pub max_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_red: 200,
            n_con: 200,
            threshold_w: 5,
            threshold_long: 64,
            threshold_short: 16,
            temperature: 0.6,
            max_attempts: 20_000,
        }
    }
}

/// One accepted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub tag: SetTag,
    pub prompt: Prompt,
    /// Tokens whose final-position activations were captured.
    pub captured: Vec<u32>,
    pub trace_length: usize,
    pub wait_count: usize,
}

/// Output of [`synth_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Redundant samples first, then concise, in acceptance order.
    pub samples: Vec<CorpusSample>,
    pub set: ActivationSet,
    pub attempts: usize,
}

enum Verdict {
    Redundant(Vec<u32>),
    Concise,
    Neither,
}

fn classify(trace: &GenerationTrace, cfg: &CorpusConfig) -> Verdict {
    if trace.wait_count >= cfg.threshold_w && trace.length >= cfg.threshold_long {
        let first = trace.tokens[trace.prompt_len..]
            .iter()
            .position(|&t| t == WAIT)
            .map(|i| i + trace.prompt_len)
            .expect("wait_count > 0 implies a WAIT token");
        return Verdict::Redundant(trace.tokens[..=first].to_vec());
    }
    if trace.wait_count == 0 && trace.length <= cfg.threshold_short {
        return Verdict::Concise;
    }
    Verdict::Neither
}

const BATCH: usize = 64;

/// Generate prompts, keep those whose traces satisfy the redundant or concise
/// rules, and capture final-token activations at every layer.
///
/// Redundant samples are truncated after their first generated WAIT (which
/// stays as the final token); concise samples are captured on the prompt
/// alone. Attempt `i` uses the substream `seed.index(i)`, and attempts are
/// consumed strictly in order, so the result does not depend on the thread
/// count.
pub fn synth_corpus(model: &ToyModel, cfg: &CorpusConfig, seed: SeedTree) -> Result<Corpus> {
    if cfg.n_red == 0 || cfg.n_con == 0 {
        return Err(Error::InvalidInput("corpus counts must be at least 1".into()));
    }
    let mut red: Vec<CorpusSample> = Vec::with_capacity(cfg.n_red);
    let mut con: Vec<CorpusSample> = Vec::with_capacity(cfg.n_con);
    let mut attempts = 0;
    while (red.len() < cfg.n_red || con.len() < cfg.n_con) && attempts < cfg.max_attempts {
        let hi = (attempts + BATCH).min(cfg.max_attempts);
        let traces: Vec<Result<(Prompt, GenerationTrace)>> = (attempts..hi)
            .into_par_iter()
            .map(|i| {
                let node = seed.index(i as u64);
                let prompt = random_prompt(&mut node.stream("prompt"));
                let sampling = Sampling::Temperature {
                    tau: cfg.temperature,
                    seed: node.child("sample").seed(),
                };
                let trace = model.generate(&prompt.tokens, sampling, None)?;
                Ok((prompt, trace))
            })
            .collect();
        for r in traces {
            attempts += 1;
            let (prompt, trace) = r?;
            match classify(&trace, cfg) {
                Verdict::Redundant(captured) if red.len() < cfg.n_red => red.push(CorpusSample {
                    tag: SetTag::Redundant,
                    prompt,
                    captured,
                    trace_length: trace.length,
                    wait_count: trace.wait_count,
                }),
                Verdict::Concise if con.len() < cfg.n_con => con.push(CorpusSample {
                    tag: SetTag::Concise,
                    captured: prompt.tokens.clone(),
                    prompt,
                    trace_length: trace.length,
                    wait_count: 0,
                }),
                _ => {}
            }
            if red.len() >= cfg.n_red && con.len() >= cfg.n_con {
                break;
            }
        }
    }
    if red.len() < cfg.n_red || con.len() < cfg.n_con {
        return Err(Error::GenerationBudgetExceeded(format!(
            "after {attempts} attempts found {}/{} redundant and {}/{} concise samples",
            red.len(),
            cfg.n_red,
            con.len(),
            cfg.n_con
        )));
    }
    let samples: Vec<CorpusSample> = red.into_iter().chain(con).collect();
    let set = capture(model, &samples)?;
    Ok(Corpus { samples, set, attempts })
}

/// Capture final-token block outputs of every sample into an activation set.
pub fn capture(model: &ToyModel, samples: &[CorpusSample]) -> Result<ActivationSet> {
    let d = model.d();
    let acts: Vec<Result<Vec<Vec<f32>>>> = samples
        .par_iter()
        .map(|s| model.final_token_activations(&s.captured, None))
        .collect();
    let mut layers: BTreeMap<usize, Vec<f32>> = (0..model.layers())
        .map(|l| (l, Vec::with_capacity(samples.len() * d)))
        .collect();
    for a in acts {
        let a = a?;
        for (l, v) in a.into_iter().enumerate() {
            layers.get_mut(&l).expect("layer").extend_from_slice(&v);
        }
    }
    let (mut nr, mut nc) = (0, 0);
    let labels = samples
        .iter()
        .map(|s| {
            let id = match s.tag {
                SetTag::Redundant => {
                    nr += 1;
                    format!("redundant-{:04}", nr - 1)
                }
                SetTag::Concise => {
                    nc += 1;
                    format!("concise-{:04}", nc - 1)
                }
            };
            SampleLabel {
                sample_id: id,
                set_tag: s.tag,
                token_count: s.trace_length as u64,
                keyword_count: s.wait_count as u64,
            }
        })
        .collect();
    ActivationSet::new(model_id(model), d, layers, labels)
}

/// Identifier recorded in ASF manifests for a toy model.
pub fn model_id(model: &ToyModel) -> String {
    format!(
        "steerkit-toy-L{}-d{}-h{}-seed{}",
        model.cfg.layers, model.cfg.d, model.cfg.heads, model.cfg.seed
    )
}
