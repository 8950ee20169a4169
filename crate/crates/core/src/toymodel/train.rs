// SPDX-License-Identifier: MIT OR Apache-2.0

//! Optional readout fine-tuning.
//!
//! The planted model needs no training: its behavioural contrast comes from
//! the planted readout. For experiments that want the answer token to mean
//! something, this module fits the unembedding (weights and bias) by
//! softmax regression on next-token targets of synthetic arithmetic strings
//! `<bos> a + b … = s <eos>`, where `s` is the sum modulo 10. Only the
//! answer and end-of-sequence positions are supervised; the residual stream
//! and the planted readout are left untouched.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SeedTree;

use super::corpus::random_prompt;
use super::tokens::{EOS, WAIT};
use super::ToyModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch: 32,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean cross-entropy per step.
    pub losses: Vec<f64>,
}

/// Fit the unembedding of a copy of `model`.
pub fn train_readout(model: &ToyModel, cfg: &TrainConfig, seed: SeedTree) -> Result<(ToyModel, TrainReport)> {
    if cfg.steps == 0 || cfg.batch == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidInput(
            "training needs steps, batch and learning rate > 0".into(),
        ));
    }
    let mut m = model.clone();
    let d = m.cfg.d;
    let v = m.cfg.vocab;
    let mut rng = seed.rng();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut grad_w = vec![0.0f64; v * d];
        let mut grad_b = vec![0.0f64; v];
        let mut loss = 0.0;
        let mut count = 0usize;
        for _ in 0..cfg.batch {
            let p = random_prompt(&mut rng);
            let mut seq = p.tokens.clone();
            seq.push(p.target);
            seq.push(EOS);
            let out = m.forward(&seq[..seq.len() - 1], None)?;
            let last = m.cfg.layers - 1;
            let plant_layer = m.planted.layer;
            // supervise the answer digit (after "=") and the EOS (after the digit)
            for pos in [seq.len() - 3, seq.len() - 2] {
                let h = &out.activations[last][pos];
                let ms = h.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>() / d as f64;
                let inv = 1.0 / (ms + 1e-6).sqrt();
                let feat: Vec<f64> = h
                    .iter()
                    .zip(&m.weights.final_norm)
                    .map(|(&x, &g)| f64::from(x) * inv * f64::from(g))
                    .collect();
                let plant: f64 = out.activations[plant_layer][pos]
                    .iter()
                    .zip(&m.planted.vector)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum();
                let mut logits: Vec<f64> = (0..v)
                    .map(|t| {
                        let row = &m.weights.unembed[t * d..(t + 1) * d];
                        row.iter().zip(&feat).map(|(&w, &f)| f64::from(w) * f).sum::<f64>()
                            + f64::from(m.weights.unembed_bias[t])
                    })
                    .collect();
                logits[WAIT as usize] += m.planted.gain * plant;
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let target = seq[pos + 1] as usize;
                loss += -(logits[target] - mx - z.ln());
                count += 1;
                for t in 0..v {
                    let p = (logits[t] - mx).exp() / z - if t == target { 1.0 } else { 0.0 };
                    grad_b[t] += p;
                    for j in 0..d {
                        grad_w[t * d + j] += p * feat[j];
                    }
                }
            }
        }
        let scale = cfg.learning_rate / count as f64;
        for (w, g) in m.weights.unembed.iter_mut().zip(&grad_w) {
            *w -= (scale * g) as f32;
        }
        for (b, g) in m.weights.unembed_bias.iter_mut().zip(&grad_b) {
            *b -= (scale * g) as f32;
        }
        losses.push(loss / count as f64);
    }
    Ok((m, TrainReport { losses }))
}
