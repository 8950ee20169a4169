// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded weight geometry for the toy model.
//!
//! Isotropic small-Gaussian weights turn out to be a poor test bed for
//! manifold steering: every direction of the residual stream then carries
//! roughly the same variance, there is no low-dimensional manifold to find,
//! and nothing downstream reacts differently to on- and off-manifold
//! perturbations. The initialisation below therefore builds the stream out of
//! orthogonal pieces of a random orthonormal frame `Q = [v | m | S | T]`:
//!
//! * `v` — the planted direction. Tokens load on it (WAIT strongly, digits
//!   with random magnitudes) and every position adds a random offset along
//!   it, so it carries a lot of within-class variance. All loadings are
//!   non-negative: the feature is "more or less present", never reversed.
//!   With symmetric loadings an ablation at α = 2, which maps `vᵀh` to
//!   `−vᵀh`, would reproduce the α = 0 distribution of the WAIT readout and
//!   any direction close to `v` would rebound. No weight matrix reads `v`;
//!   only the planted readout and a dedicated "carry" attention head do.
//! * `m` — a "massive" direction: a constant offset at every position,
//!   read by nothing. It carries no variance and cancels in every class
//!   difference, but it dominates the stream norm, so that removing `v`
//!   barely changes what the RMS normalisation does to the rest of the
//!   stream (as with the massive activations of real models).
//! * `S` — a few high-variance directions dominated by the position
//!   embeddings. Blocks read them only with gain `manifold_read`, which is
//!   zero in the calibrated configuration.
//! * `T` — the remaining low-variance "tail". Token identity lives here, and
//!   blocks read it with gain calibrated to its natural scale, so the network
//!   is sensitive to displacements along `T`. Block outputs are written back
//!   into `T` only.
//!
//! The top principal components of the activations are then `v` and `S`,
//! while a naively estimated direction also picks up `T` components that the
//! network reacts to. The EOS row of the unembedding ignores `T`: stopping
//! is decided by the bias and the weakly read `S` directions only, so a large
//! tail displacement raises some other token's logit until it outcompetes EOS
//! (the toy analogue of degenerate repetition under over-steering).
//!
//! Head 0 of every block is the carry head: uniform causal
//! attention (zero queries and keys) whose value reads the normalised `v`
//! coordinate and writes `carry_gain · v`, so WAIT tokens make later WAIT
//! tokens more likely.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::{SeedTree, StageRng};

use super::tokens::{self, BOS, EOS, EQ, PLUS, WAIT};
use super::{BlockWeights, PlantedDirection, ToyModelConfig, ToyWeights};

/// Geometry knobs for [`init_weights`]. The defaults are the calibrated
/// demo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Number of high-variance `S` directions.
    pub manifold_dims: usize,
    /// Position-embedding scale along `S`.
    pub pos_scale_manifold: f64,
    /// Position-embedding scale along `v` (half-normal offsets).
    pub pos_scale_plant: f64,
    /// Position-embedding scale along `T`.
    pub pos_scale_tail: f64,
    /// Constant offset along the massive direction `m`, added at every
    /// position.
    pub massive: f64,
    /// Token-embedding scale along `S`.
    pub tok_scale_manifold: f64,
    /// Token-embedding scale along `T`.
    pub tok_scale_tail: f64,
    /// Loading of WAIT on `v`.
    pub wait_loading: f64,
    /// Multiplier on the WAIT token's `T` embedding (token-identity signal
    /// that separates the classes off the manifold).
    pub wait_tail: f64,
    /// Loading of ALT on `v`.
    pub alt_loading: f64,
    /// Scale of the (half-normal) digit loadings on `v`.
    pub digit_loading: f64,
    /// Output gain of the carry head.
    pub carry_gain: f64,
    /// Overall read gain of every block and the unembedding.
    pub read_gain: f64,
    /// Relative read gain on `S` (1 = calibrated to the `S` scale).
    pub manifold_read: f64,
    /// Relative read gain on `T` (1 = calibrated to the token scale on `T`).
    pub tail_read: f64,
    /// Scale of block writes into `T`, relative to the token scale on `T`.
    pub write_scale: f64,
    pub eos_bias: f64,
    pub wait_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            manifold_dims: 2,
            pos_scale_manifold: 1.5,
            pos_scale_plant: 10.0,
            pos_scale_tail: 0.0,
            massive: 60.0,
            tok_scale_manifold: 0.1,
            tok_scale_tail: 0.3,
            wait_loading: 2.5,
            wait_tail: 2.0,
            alt_loading: 0.0,
            digit_loading: 3.0,
            carry_gain: 0.5,
            read_gain: 1.0,
            manifold_read: 0.0,
            tail_read: 9.0,
            write_scale: 0.3,
            eos_bias: 0.5,
            wait_bias: -2.5,
        }
    }
}

impl InitConfig {
    pub fn validate(&self, cfg: &ToyModelConfig) -> Result<()> {
        if self.manifold_dims + 2 >= cfg.d {
            return Err(Error::Validation(format!(
                "manifold_dims={} leaves no tail directions for d={}",
                self.manifold_dims, cfg.d
            )));
        }
        if cfg.head_dim() < 1 {
            return Err(Error::Validation("head dimension must be positive".into()));
        }
        let scales = [
            self.pos_scale_manifold,
            self.pos_scale_plant,
            self.pos_scale_tail,
            self.massive,
            self.tok_scale_manifold,
            self.tok_scale_tail,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Validation("embedding scales must be finite and >= 0".into()));
        }
        if !(self.pos_scale_manifold > 0.0 && self.tok_scale_tail > 0.0) {
            return Err(Error::Validation(
                "pos_scale_manifold and tok_scale_tail set read calibration and must be > 0".into(),
            ));
        }
        let rest = [
            self.wait_loading,
            self.wait_tail,
            self.alt_loading,
            self.digit_loading,
            self.carry_gain,
            self.read_gain,
            self.manifold_read,
            self.tail_read,
            self.write_scale,
            self.eos_bias,
            self.wait_bias,
        ];
        if rest.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("init parameters must be finite".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut StageRng) -> f64 {
    StandardNormal.sample(rng)
}

/// A seeded random unit vector in `R^d`.
pub fn random_unit_vector(d: usize, seed: SeedTree) -> Vec<f64> {
    let mut rng = seed.rng();
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

impl PlantedDirection {
    /// A random planted direction derived from the model seed.
    pub fn random(cfg: &ToyModelConfig, layer: usize, gain: f64) -> PlantedDirection {
        PlantedDirection {
            layer,
            vector: random_unit_vector(cfg.d, SeedTree::new(cfg.seed).child("plant")),
            gain,
        }
    }
}

/// Orthonormal frame whose first column is `v` (columns as vectors).
fn frame(v: &[f64], rng: &mut StageRng) -> Vec<Vec<f64>> {
    let d = v.len();
    let mut cols: Vec<Vec<f64>> = vec![v.to_vec()];
    while cols.len() < d {
        let mut c: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let p = dot(q, &c);
                for (x, y) in c.iter_mut().zip(q) {
                    *x -= p * y;
                }
            }
        }
        let n = norm(&c);
        if n > 1e-8 {
            c.iter_mut().for_each(|x| *x /= n);
            cols.push(c);
        }
    }
    cols
}

/// Rows `Σ_j coef[j] · basis[j]` for a `count × basis.len()` coefficient
/// draw with the given per-row scale.
fn embed(rows: usize, d: usize, parts: &[(&[Vec<f64>], f64)], rng: &mut StageRng) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for (basis, scale) in parts {
        for r in 0..rows {
            for q in basis.iter() {
                let z = gaussian(rng) * scale;
                for (o, &qi) in out[r * d..(r + 1) * d].iter_mut().zip(q) {
                    *o += z * qi;
                }
            }
        }
    }
    out
}

/// The frame `[v | m | S | T]` that [`init_weights`] builds the stream from,
/// as `(v, m, S, T)` column lists.
pub fn geometry_frame(
    cfg: &ToyModelConfig,
    planted: &PlantedDirection,
    init: &InitConfig,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = SeedTree::new(cfg.seed).child("weights").stream("frame");
    let mut q = frame(&planted.vector, &mut rng);
    let t = q.split_off(2 + init.manifold_dims);
    let s = q.split_off(2);
    let m = q.pop().expect("frame has d >= 2 columns");
    (q.pop().expect("frame starts with v"), m, s, t)
}

/// Draw all weights for `cfg` with the geometry of `init`.
pub fn init_weights(cfg: &ToyModelConfig, planted: &PlantedDirection, init: &InitConfig) -> ToyWeights {
    let d = cfg.d;
    let root = SeedTree::new(cfg.seed).child("weights");
    let mut rng = root.stream("frame");
    let q = frame(&planted.vector, &mut rng);
    let v0 = &q[0];
    let m = &q[1];
    let s = &q[2..2 + init.manifold_dims];
    let t = &q[2 + init.manifold_dims..];

    // token embeddings
    let mut rng = root.stream("tok_emb");
    let mut tok = embed(
        cfg.vocab,
        d,
        &[(s, init.tok_scale_manifold), (t, init.tok_scale_tail)],
        &mut rng,
    );
    {
        let row = &mut tok[WAIT as usize * d..(WAIT as usize + 1) * d];
        let mut tail = vec![0.0; d];
        for c in t {
            let p = dot(row, c);
            for (x, &ci) in tail.iter_mut().zip(c) {
                *x += p * ci;
            }
        }
        for (x, y) in row.iter_mut().zip(&tail) {
            *x += (init.wait_tail - 1.0) * y;
        }
    }
    let mut loading = vec![0.0; cfg.vocab];
    for l in loading.iter_mut().take(10) {
        *l = gaussian(&mut rng).abs() * init.digit_loading;
    }
    loading[WAIT as usize] = init.wait_loading;
    loading[tokens::ALT as usize] = init.alt_loading;
    for (r, &k) in loading.iter().enumerate() {
        for (o, &vi) in tok[r * d..(r + 1) * d].iter_mut().zip(v0) {
            *o += k * vi;
        }
    }

    // position embeddings
    let mut rng = root.stream("pos_emb");
    let mut pos = embed(
        cfg.max_seq,
        d,
        &[(s, init.pos_scale_manifold), (t, init.pos_scale_tail)],
        &mut rng,
    );
    for p in 0..cfg.max_seq {
        let z = gaussian(&mut rng).abs() * init.pos_scale_plant;
        for ((o, &vi), &mi) in pos[p * d..(p + 1) * d].iter_mut().zip(v0).zip(m) {
            *o += z * vi + init.massive * mi;
        }
    }

    // read map R = diag(g) Qᵀ with g = 0 on v and m
    let g_s = init.read_gain * init.manifold_read / init.pos_scale_manifold;
    let g_t = init.read_gain * init.tail_read / init.tok_scale_tail;
    let mut read_rows: Vec<(f64, &Vec<f64>)> = Vec::with_capacity(d - 2);
    read_rows.extend(s.iter().map(|c| (g_s, c)));
    read_rows.extend(t.iter().map(|c| (g_t, c)));
    let read = |out: usize, rng: &mut StageRng| -> Vec<f64> {
        // W = Z R / √d with Z ~ N(0, 1)^{out × d}
        let mut w = vec![0.0; out * d];
        let sd = 1.0 / (d as f64).sqrt();
        for o in 0..out {
            for (g, c) in &read_rows {
                let z = gaussian(rng) * sd * g;
                for (wi, &ci) in w[o * d..(o + 1) * d].iter_mut().zip(c.iter()) {
                    *wi += z * ci;
                }
            }
        }
        w
    };
    let write = |inp: usize, rng: &mut StageRng| -> Vec<f64> {
        // W = T Z · scale / √inp, written only into the tail
        let mut w = vec![0.0; d * inp];
        let sc = init.write_scale * init.tok_scale_tail / (inp as f64).sqrt();
        for c in t {
            for j in 0..inp {
                let z = gaussian(rng) * sc;
                for (i, &ci) in c.iter().enumerate() {
                    w[i * inp + j] += ci * z;
                }
            }
        }
        w
    };
    let to32 = |v: Vec<f64>| -> Vec<f32> { v.into_iter().map(|x| x as f32).collect() };

    let dh = cfg.head_dim();
    let mut blocks = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut rng = root.child("block").index(l as u64).rng();
        let mut wq = read(d, &mut rng);
        let mut wk = read(d, &mut rng);
        let mut wv = read(d, &mut rng);
        let mut wo = write(d, &mut rng);
        // carry head: rows 0..dh of q/k/v and columns 0..dh of o
        for r in 0..dh {
            for c in 0..d {
                wq[r * d + c] = 0.0;
                wk[r * d + c] = 0.0;
                wv[r * d + c] = 0.0;
            }
        }
        wv[..d].copy_from_slice(v0);
        for i in 0..d {
            for c in 0..dh {
                wo[i * d + c] = 0.0;
            }
            wo[i * d] = init.carry_gain * v0[i];
        }
        let w1 = read(4 * d, &mut rng);
        let w2 = write(4 * d, &mut rng);
        blocks.push(BlockWeights {
            attn_norm: vec![1.0; d],
            wq: to32(wq),
            wk: to32(wk),
            wv: to32(wv),
            wo: to32(wo),
            mlp_norm: vec![1.0; d],
            w1: to32(w1),
            b1: vec![0.0; 4 * d],
            w2: to32(w2),
            b2: vec![0.0; d],
        });
    }

    let mut rng = root.stream("unembed");
    let mut unembed = read(cfg.vocab, &mut rng);
    // EOS is a global stop decision: its row must not depend on token
    // identity, so strip its tail components.
    {
        let row = &mut unembed[EOS as usize * d..(EOS as usize + 1) * d];
        for c in t {
            let p = dot(row, c);
            for (x, &ci) in row.iter_mut().zip(c) {
                *x -= p * ci;
            }
        }
    }
    let mut bias = vec![0.0f32; cfg.vocab];
    bias[EOS as usize] = init.eos_bias as f32;
    bias[WAIT as usize] = init.wait_bias as f32;
    for t in [PLUS, EQ, BOS] {
        bias[t as usize] = -8.0;
    }

    ToyWeights {
        tok_emb: to32(tok),
        pos_emb: to32(pos),
        blocks,
        final_norm: vec![1.0; d],
        unembed: to32(unembed),
        unembed_bias: bias,
    }
}
