// SPDX-License-Identifier: MIT OR Apache-2.0

//! A desk-scale decoder-only transformer with a planted verbosity direction.
//!
//! The residual stream follows the usual pre-norm update
//!
//! ```text
//! h⁽ˡ⁾ = h⁽ˡ⁻¹⁾ + Attn(Norm(h⁽ˡ⁻¹⁾)) + MLP(Norm(h⁽ˡ⁻¹⁾ + Attn(…)))
//! ```
//!
//! with learned (here: seeded random) token and position embeddings, causal
//! multi-head attention, a GeLU MLP and RMS normalisation. On top of the
//! ordinary unembedding, a fixed readout adds `gain · (vᵀh⁽ᴸᵖ⁾)` to the WAIT
//! logit, where `v` is the planted direction and `Lp` its layer. That makes
//! "verbosity" a linear feature of the residual stream by construction, so a
//! recovered steering direction can be scored against the truth.
//!
//! The random weights are not isotropic; see [`init::InitConfig`] for the
//! geometry and why it is needed.

pub mod corpus;
pub mod init;
pub mod io;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng::StageRng;

pub use init::InitConfig;

/// Fixed 16-symbol vocabulary.
pub mod tokens {
    pub const PLUS: u32 = 10;
    pub const EQ: u32 = 11;
    pub const WAIT: u32 = 12;
    pub const ALT: u32 = 13;
    pub const EOS: u32 = 14;
    pub const BOS: u32 = 15;
    pub const VOCAB: usize = 16;

    pub fn is_digit(t: u32) -> bool {
        t < 10
    }

    /// Human-readable symbol for a token id.
    pub fn symbol(t: u32) -> &'static str {
        const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
        match t {
            0..=9 => DIGITS[t as usize],
            PLUS => "+",
            EQ => "=",
            WAIT => "<wait>",
            ALT => "<alt>",
            EOS => "<eos>",
            BOS => "<bos>",
            _ => "?",
        }
    }

    /// Render a token sequence, e.g. `<bos>3+4=7<eos>`.
    pub fn render(ts: &[u32]) -> String {
        ts.iter().map(|&t| symbol(t)).collect()
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            layers: 4,
            d: 32,
            heads: 2,
            vocab: tokens::VOCAB,
            max_seq: 256,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Validation("model needs at least one layer".into()));
        }
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return Err(Error::Validation(format!(
                "hidden size d={} must be a positive multiple of heads={}",
                self.d, self.heads
            )));
        }
        if self.vocab != tokens::VOCAB {
            return Err(Error::Validation(format!(
                "vocabulary is the fixed {}-symbol table, got vocab={}",
                tokens::VOCAB,
                self.vocab
            )));
        }
        if self.max_seq < 2 {
            return Err(Error::Validation("max_seq must be at least 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Ground-truth verbosity direction wired into the WAIT logit.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDirection {
    pub layer: usize,
    pub vector: Vec<f64>,
    pub gain: f64,
}

impl PlantedDirection {
    pub fn validate(&self, cfg: &ToyModelConfig) -> Result<()> {
        if self.layer >= cfg.layers {
            return Err(Error::Validation(format!(
                "planted layer {} out of range for {} layers",
                self.layer, cfg.layers
            )));
        }
        if self.vector.len() != cfg.d {
            return Err(Error::Validation(format!(
                "planted vector has length {}, expected d={}",
                self.vector.len(),
                cfg.d
            )));
        }
        let n = norm(&self.vector);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("planted vector norm {n} is not 1")));
        }
        if !self.gain.is_finite() {
            return Err(Error::Validation("planted gain must be finite".into()));
        }
        Ok(())
    }
}

/// Weights of one transformer block (row-major, outputs × inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub mlp_norm: Vec<f32>,
    /// `4d × d`
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// `d × 4d`
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// All parameters of a toy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    /// `vocab × d`
    pub tok_emb: Vec<f32>,
    /// `max_seq × d`
    pub pos_emb: Vec<f32>,
    pub blocks: Vec<BlockWeights>,
    pub final_norm: Vec<f32>,
    /// `vocab × d`
    pub unembed: Vec<f32>,
    pub unembed_bias: Vec<f32>,
}

/// An immutable, shareable toy transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub cfg: ToyModelConfig,
    pub init: InitConfig,
    pub planted: PlantedDirection,
    pub weights: ToyWeights,
}

/// Per-layer, per-position activation transform applied to every block
/// output.
pub trait Hook: Sync {
    fn apply(&self, layer: usize, pos: usize, h: &mut [f32]);
}

/// Any closure of the right shape is a hook.
impl<F> Hook for F
where
    F: Fn(usize, usize, &mut [f32]) + Sync,
{
    fn apply(&self, layer: usize, pos: usize, h: &mut [f32]) {
        self(layer, pos, h)
    }
}

/// Decoding strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { tau: f64, seed: u64 },
}

/// Result of a generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    /// Prompt followed by generated tokens (including a final EOS if one was
    /// sampled).
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
    /// Block outputs at the last processed position, one per layer.
    pub final_activations: Vec<Vec<f32>>,
    pub wait_count: usize,
    pub length: usize,
}

impl GenerationTrace {
    pub fn generated(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }

    pub fn generated_len(&self) -> usize {
        self.length - self.prompt_len
    }
}

/// Whole-sequence forward output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[pos][vocab]`
    pub logits: Vec<Vec<f32>>,
    /// `[layer][pos][d]`, block outputs after the hook.
    pub activations: Vec<Vec<Vec<f32>>>,
}

/// Forward output with the per-block update terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedOutput {
    pub forward: ForwardOutput,
    /// `[pos][d]` embedding sum (the stream entering block 0).
    pub embeddings: Vec<Vec<f32>>,
    /// `[layer][pos][d]` attention output added to the stream.
    pub attn_out: Vec<Vec<Vec<f32>>>,
    /// `[layer][pos][d]` MLP output added to the stream.
    pub mlp_out: Vec<Vec<Vec<f32>>>,
}

const NORM_EPS: f32 = 1e-6;

#[inline]
fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

#[inline]
fn matvec(w: &[f32], x: &[f32], out: &mut [f32]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut s = 0.0f32;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o = s;
    }
}

fn rms_norm(x: &[f32], g: &[f32], out: &mut [f32]) {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    for ((o, &v), &gi) in out.iter_mut().zip(x).zip(g) {
        *o = v * inv * gi;
    }
}

/// Incremental decoding state (key/value cache per layer).
pub struct Session<'m> {
    model: &'m ToyModel,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    pos: usize,
    // scratch
    x: Vec<f32>,
    n: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    att: Vec<f32>,
    tmp: Vec<f32>,
    hidden: Vec<f32>,
    scores: Vec<f32>,
}

/// Everything one decoding step produces.
pub struct StepOutput<'a> {
    pub logits: &'a [f32],
    /// `[layer][d]`
    pub activations: &'a [Vec<f32>],
}

/// Per-step instrumentation buffers.
struct StepRecord {
    acts: Vec<Vec<f32>>,
    attn: Vec<Vec<f32>>,
    mlp: Vec<Vec<f32>>,
    emb: Vec<f32>,
    logits: Vec<f32>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m ToyModel) -> Self {
        let d = model.cfg.d;
        let cap = model.cfg.max_seq * d;
        Session {
            model,
            keys: (0..model.cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..model.cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
            pos: 0,
            x: vec![0.0; d],
            n: vec![0.0; d],
            q: vec![0.0; d],
            k: vec![0.0; d],
            v: vec![0.0; d],
            att: vec![0.0; d],
            tmp: vec![0.0; d],
            hidden: vec![0.0; 4 * d],
            scores: Vec::with_capacity(model.cfg.max_seq),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn step_into(&mut self, token: u32, hook: Option<&dyn Hook>, rec: &mut StepRecord) -> Result<()> {
        let m = self.model;
        let cfg = &m.cfg;
        if token as usize >= cfg.vocab {
            return Err(Error::InvalidInput(format!(
                "token id {token} out of range for vocab {}",
                cfg.vocab
            )));
        }
        if self.pos >= cfg.max_seq {
            return Err(Error::InvalidInput(format!("sequence exceeds max_seq={}", cfg.max_seq)));
        }
        let d = cfg.d;
        let dh = cfg.head_dim();
        let t = token as usize;
        let w = &m.weights;
        for i in 0..d {
            self.x[i] = w.tok_emb[t * d + i] + w.pos_emb[self.pos * d + i];
        }
        rec.emb.copy_from_slice(&self.x);
        let scale = 1.0 / (dh as f32).sqrt();
        let mut plant_feature = 0.0f64;
        for (l, b) in w.blocks.iter().enumerate() {
            // attention
            rms_norm(&self.x, &b.attn_norm, &mut self.n);
            matvec(&b.wq, &self.n, &mut self.q);
            matvec(&b.wk, &self.n, &mut self.k);
            matvec(&b.wv, &self.n, &mut self.v);
            self.keys[l].extend_from_slice(&self.k);
            self.values[l].extend_from_slice(&self.v);
            let npos = self.pos + 1;
            let keys = &self.keys[l];
            let values = &self.values[l];
            for h in 0..cfg.heads {
                let off = h * dh;
                self.scores.clear();
                let mut mx = f32::NEG_INFINITY;
                for p in 0..npos {
                    let kr = &keys[p * d + off..p * d + off + dh];
                    let mut s = 0.0f32;
                    for (a, bb) in self.q[off..off + dh].iter().zip(kr) {
                        s += a * bb;
                    }
                    let s = s * scale;
                    mx = mx.max(s);
                    self.scores.push(s);
                }
                let mut z = 0.0f32;
                for s in self.scores.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                let out = &mut self.att[off..off + dh];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (p, &s) in self.scores.iter().enumerate() {
                    let pw = s / z;
                    let vr = &values[p * d + off..p * d + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vr) {
                        *o += pw * vv;
                    }
                }
            }
            matvec(&b.wo, &self.att, &mut self.tmp);
            rec.attn[l].copy_from_slice(&self.tmp);
            for i in 0..d {
                self.x[i] += self.tmp[i];
            }
            // MLP
            rms_norm(&self.x, &b.mlp_norm, &mut self.n);
            matvec(&b.w1, &self.n, &mut self.hidden);
            for (hv, &bb) in self.hidden.iter_mut().zip(&b.b1) {
                *hv = gelu(*hv + bb);
            }
            matvec(&b.w2, &self.hidden, &mut self.tmp);
            for (tv, &bb) in self.tmp.iter_mut().zip(&b.b2) {
                *tv += bb;
            }
            rec.mlp[l].copy_from_slice(&self.tmp);
            for i in 0..d {
                self.x[i] += self.tmp[i];
            }
            if let Some(hk) = hook {
                hk.apply(l, self.pos, &mut self.x);
            }
            rec.acts[l].copy_from_slice(&self.x);
            if l == m.planted.layer {
                plant_feature = self
                    .x
                    .iter()
                    .zip(&m.planted.vector)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum();
            }
        }
        rms_norm(&self.x, &w.final_norm, &mut self.n);
        matvec(&w.unembed, &self.n, &mut rec.logits);
        for (lg, &bb) in rec.logits.iter_mut().zip(&w.unembed_bias) {
            *lg += bb;
        }
        rec.logits[tokens::WAIT as usize] += (m.planted.gain * plant_feature) as f32;
        self.pos += 1;
        Ok(())
    }
}

impl StepRecord {
    fn new(cfg: &ToyModelConfig) -> Self {
        StepRecord {
            acts: vec![vec![0.0; cfg.d]; cfg.layers],
            attn: vec![vec![0.0; cfg.d]; cfg.layers],
            mlp: vec![vec![0.0; cfg.d]; cfg.layers],
            emb: vec![0.0; cfg.d],
            logits: vec![0.0; cfg.vocab],
        }
    }
}

/// A [`Session`] bundled with its step buffers.
pub struct Decoder<'m> {
    session: Session<'m>,
    rec: StepRecord,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m ToyModel) -> Self {
        Decoder {
            session: Session::new(model),
            rec: StepRecord::new(&model.cfg),
        }
    }

    /// Feed one token at the next position.
    pub fn step(&mut self, token: u32, hook: Option<&dyn Hook>) -> Result<StepOutput<'_>> {
        self.session.step_into(token, hook, &mut self.rec)?;
        Ok(StepOutput {
            logits: &self.rec.logits,
            activations: &self.rec.acts,
        })
    }

    pub fn position(&self) -> usize {
        self.session.position()
    }
}

/// Softmax-with-temperature sampling by inverse CDF on one uniform draw.
fn sample_token(logits: &[f32], tau: f64, rng: &mut StageRng) -> u32 {
    use rand::Rng;
    let mx = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let w: Vec<f64> = logits
        .iter()
        .map(|&l| ((f64::from(l) - f64::from(mx)) / tau).exp())
        .collect();
    let z: f64 = w.iter().sum();
    let u: f64 = rng.random::<f64>() * z;
    let mut acc = 0.0;
    for (i, &p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // u landed on the rounding slack at the top end
    w.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

impl ToyModel {
    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn layers(&self) -> usize {
        self.cfg.layers
    }

    /// Run the whole sequence, returning logits and block outputs at every
    /// position.
    pub fn forward(&self, tokens: &[u32], hook: Option<&dyn Hook>) -> Result<ForwardOutput> {
        Ok(self.forward_instrumented(tokens, hook)?.forward)
    }

    /// [`ToyModel::forward`] that also records the attention and MLP update
    /// terms of every block.
    pub fn forward_instrumented(&self, tokens: &[u32], hook: Option<&dyn Hook>) -> Result<InstrumentedOutput> {
        if tokens.len() > self.cfg.max_seq {
            return Err(Error::InvalidInput(format!(
                "sequence of length {} exceeds max_seq={}",
                tokens.len(),
                self.cfg.max_seq
            )));
        }
        let nl = self.cfg.layers;
        let mut s = Session::new(self);
        let mut rec = StepRecord::new(&self.cfg);
        let mut out = InstrumentedOutput {
            forward: ForwardOutput {
                logits: Vec::with_capacity(tokens.len()),
                activations: vec![Vec::with_capacity(tokens.len()); nl],
            },
            embeddings: Vec::with_capacity(tokens.len()),
            attn_out: vec![Vec::with_capacity(tokens.len()); nl],
            mlp_out: vec![Vec::with_capacity(tokens.len()); nl],
        };
        for &t in tokens {
            s.step_into(t, hook, &mut rec)?;
            out.forward.logits.push(rec.logits.clone());
            out.embeddings.push(rec.emb.clone());
            for l in 0..nl {
                out.forward.activations[l].push(rec.acts[l].clone());
                out.attn_out[l].push(rec.attn[l].clone());
                out.mlp_out[l].push(rec.mlp[l].clone());
            }
        }
        Ok(out)
    }

    /// Block outputs at the final position of `tokens`, one per layer.
    pub fn final_token_activations(&self, tokens: &[u32], hook: Option<&dyn Hook>) -> Result<Vec<Vec<f32>>> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        let mut dec = Decoder::new(self);
        for (i, &t) in tokens.iter().enumerate() {
            let out = dec.step(t, hook)?;
            if i + 1 == tokens.len() {
                return Ok(out.activations.to_vec());
            }
        }
        unreachable!("loop returns on the last token")
    }

    /// Autoregressive decoding until EOS or `max_seq` tokens.
    pub fn generate(&self, prompt: &[u32], sampling: Sampling, hook: Option<&dyn Hook>) -> Result<GenerationTrace> {
        if prompt.is_empty() {
            return Err(Error::InvalidInput("prompt must not be empty".into()));
        }
        if prompt.len() > self.cfg.max_seq {
            return Err(Error::InvalidInput(format!(
                "prompt of length {} exceeds max_seq={}",
                prompt.len(),
                self.cfg.max_seq
            )));
        }
        let mut rng = match sampling {
            Sampling::Temperature { tau, seed } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
                }
                Some(crate::rng::SeedTree::new(seed).rng())
            }
            Sampling::Greedy => None,
        };
        let mut dec = Decoder::new(self);
        let mut toks = prompt.to_vec();
        let mut last_acts = Vec::new();
        let mut next = 0u32;
        for (i, &t) in prompt.iter().enumerate() {
            let out = dec.step(t, hook)?;
            if i + 1 == prompt.len() {
                next = match (&mut rng, sampling) {
                    (Some(r), Sampling::Temperature { tau, .. }) => sample_token(out.logits, tau, r),
                    _ => argmax(out.logits),
                };
                last_acts = out.activations.to_vec();
            }
        }
        while toks.len() < self.cfg.max_seq {
            toks.push(next);
            if next == tokens::EOS || toks.len() >= self.cfg.max_seq {
                break;
            }
            let out = dec.step(next, hook)?;
            next = match (&mut rng, sampling) {
                (Some(r), Sampling::Temperature { tau, .. }) => sample_token(out.logits, tau, r),
                _ => argmax(out.logits),
            };
            last_acts.clone_from_slice(out.activations);
        }
        let wait_count = toks.iter().filter(|&&t| t == tokens::WAIT).count();
        let length = toks.len();
        Ok(GenerationTrace {
            tokens: toks,
            prompt_len: prompt.len(),
            final_activations: last_acts,
            wait_count,
            length,
        })
    }

    /// MLP output projection of a block as a `d × 4d` matrix.
    pub fn mlp_out_matrix(&self, layer: usize) -> crate::linalg::Matrix {
        let d = self.cfg.d;
        let w = &self.weights.blocks[layer].w2;
        crate::linalg::Matrix::new(d, 4 * d, w.iter().map(|&v| f64::from(v)).collect()).expect("shape")
    }

    /// Attention output projection of a block as a `d × d` matrix.
    pub fn attn_out_matrix(&self, layer: usize) -> crate::linalg::Matrix {
        let d = self.cfg.d;
        let w = &self.weights.blocks[layer].wo;
        crate::linalg::Matrix::new(d, d, w.iter().map(|&v| f64::from(v)).collect()).expect("shape")
    }
}

/// Build a model from a configuration, a planted direction and the default
/// weight geometry.
pub fn build_model(cfg: &ToyModelConfig, planted: &PlantedDirection) -> Result<ToyModel> {
    build_model_with(cfg, planted, &InitConfig::default())
}

/// [`build_model`] with an explicit weight geometry.
pub fn build_model_with(cfg: &ToyModelConfig, planted: &PlantedDirection, init: &InitConfig) -> Result<ToyModel> {
    cfg.validate()?;
    planted.validate(cfg)?;
    init.validate(cfg)?;
    let weights = init::init_weights(cfg, planted, init);
    Ok(ToyModel {
        cfg: cfg.clone(),
        init: init.clone(),
        planted: planted.clone(),
        weights,
    })
}
