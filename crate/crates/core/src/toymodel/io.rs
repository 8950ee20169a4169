// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model persistence: `model.json` (configuration, planted direction and an
//! ordered tensor table) next to `weights.bin` (concatenated f32le tensors).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asf::{crc32_hex, f32_from_le_bytes, f32_le_bytes};
use crate::error::{Error, Result};

use super::{BlockWeights, InitConfig, PlantedDirection, ToyModel, ToyModelConfig, ToyWeights};

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of `weights.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFile {
    pub layer: usize,
    pub gain: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: ToyModelConfig,
    pub init: InitConfig,
    pub planted: PlantedFile,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub checksum: String,
}

fn tensor_list(w: &ToyWeights) -> Vec<(String, &Vec<f32>)> {
    let mut v: Vec<(String, &Vec<f32>)> = vec![("tok_emb".into(), &w.tok_emb), ("pos_emb".into(), &w.pos_emb)];
    for (l, b) in w.blocks.iter().enumerate() {
        v.push((format!("blocks.{l}.attn_norm"), &b.attn_norm));
        v.push((format!("blocks.{l}.wq"), &b.wq));
        v.push((format!("blocks.{l}.wk"), &b.wk));
        v.push((format!("blocks.{l}.wv"), &b.wv));
        v.push((format!("blocks.{l}.wo"), &b.wo));
        v.push((format!("blocks.{l}.mlp_norm"), &b.mlp_norm));
        v.push((format!("blocks.{l}.w1"), &b.w1));
        v.push((format!("blocks.{l}.b1"), &b.b1));
        v.push((format!("blocks.{l}.w2"), &b.w2));
        v.push((format!("blocks.{l}.b2"), &b.b2));
    }
    v.push(("final_norm".into(), &w.final_norm));
    v.push(("unembed".into(), &w.unembed));
    v.push(("unembed_bias".into(), &w.unembed_bias));
    v
}

fn expected_shapes(cfg: &ToyModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d;
    let mut v = vec![
        ("tok_emb".to_string(), vec![cfg.vocab, d]),
        ("pos_emb".to_string(), vec![cfg.max_seq, d]),
    ];
    for l in 0..cfg.layers {
        v.push((format!("blocks.{l}.attn_norm"), vec![d]));
        v.push((format!("blocks.{l}.wq"), vec![d, d]));
        v.push((format!("blocks.{l}.wk"), vec![d, d]));
        v.push((format!("blocks.{l}.wv"), vec![d, d]));
        v.push((format!("blocks.{l}.wo"), vec![d, d]));
        v.push((format!("blocks.{l}.mlp_norm"), vec![d]));
        v.push((format!("blocks.{l}.w1"), vec![4 * d, d]));
        v.push((format!("blocks.{l}.b1"), vec![4 * d]));
        v.push((format!("blocks.{l}.w2"), vec![d, 4 * d]));
        v.push((format!("blocks.{l}.b2"), vec![d]));
    }
    v.push(("final_norm".into(), vec![d]));
    v.push(("unembed".into(), vec![cfg.vocab, d]));
    v.push(("unembed_bias".into(), vec![cfg.vocab]));
    v
}

/// Write `model.json` and `weights.bin` into `dir`.
pub fn save_model(model: &ToyModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shapes = expected_shapes(&model.cfg);
    let mut flat: Vec<f32> = Vec::new();
    let mut tensors = Vec::new();
    for ((name, data), (_, shape)) in tensor_list(&model.weights).into_iter().zip(shapes) {
        tensors.push(TensorEntry {
            name,
            shape,
            offset: flat.len(),
        });
        flat.extend_from_slice(data);
    }
    let bytes = f32_le_bytes(&flat);
    let file = ModelFile {
        config: model.cfg.clone(),
        init: model.init.clone(),
        planted: PlantedFile {
            layer: model.planted.layer,
            gain: model.planted.gain,
            vector: model.planted.vector.clone(),
        },
        dtype: "f32le".into(),
        tensors,
        checksum: crc32_hex(&bytes),
    };
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MODEL_FILE);
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::Validation(format!("cannot encode model file: {e}")))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Load a model written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<ToyModel> {
    let mpath = dir.join(MODEL_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let file: ModelFile =
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", mpath.display())))?;
    file.config.validate()?;
    let planted = PlantedDirection {
        layer: file.planted.layer,
        vector: file.planted.vector.clone(),
        gain: file.planted.gain,
    };
    planted.validate(&file.config)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let actual = crc32_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&file.checksum) {
        return Err(Error::CorruptData(format!(
            "{}: checksum {actual} does not match {}",
            wpath.display(),
            file.checksum
        )));
    }
    if bytes.len() % 4 != 0 {
        return Err(Error::Validation(format!(
            "{}: length not a multiple of 4",
            wpath.display()
        )));
    }
    let flat = f32_from_le_bytes(&bytes);
    let shapes = expected_shapes(&file.config);
    if shapes.len() != file.tensors.len() {
        return Err(Error::Validation(format!(
            "{}: {} tensors listed, expected {}",
            mpath.display(),
            file.tensors.len(),
            shapes.len()
        )));
    }
    let mut parts: Vec<Vec<f32>> = Vec::with_capacity(shapes.len());
    for (entry, (name, shape)) in file.tensors.iter().zip(&shapes) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Validation(format!(
                "{}: tensor {:?} {:?} where {name:?} {shape:?} was expected",
                mpath.display(),
                entry.name,
                entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        let end = entry.offset + len;
        if end > flat.len() {
            return Err(Error::Validation(format!(
                "{}: tensor {name} runs past the end of {WEIGHTS_FILE}",
                mpath.display()
            )));
        }
        parts.push(flat[entry.offset..end].to_vec());
    }
    let mut it = parts.into_iter();
    let mut next = || it.next().expect("tensor count checked");
    let tok_emb = next();
    let pos_emb = next();
    let mut blocks = Vec::with_capacity(file.config.layers);
    for _ in 0..file.config.layers {
        blocks.push(BlockWeights {
            attn_norm: next(),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            mlp_norm: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        });
    }
    let weights = ToyWeights {
        tok_emb,
        pos_emb,
        blocks,
        final_norm: next(),
        unembed: next(),
        unembed_bias: next(),
    };
    Ok(ToyModel {
        cfg: file.config,
        init: file.init,
        planted,
        weights,
    })
}
