// SPDX-License-Identifier: MIT OR Apache-2.0

//! The activation-set interchange format (ASF).
//!
//! An ASF directory holds:
//!
//! * `manifest.json` — shape, layer ids and a CRC-32 per binary file,
//! * `labels.json` — one [`SampleLabel`] per row, in row order,
//! * `layer_<l>.bin` — raw little-endian `f32`, row-major `[num_samples, d]`,
//!   no header.
//!
//! Exactly one vector (the final-token residual stream) is stored per sample
//! per layer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const ASF_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.json";

/// Which contrastive set a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetTag {
    Redundant,
    Concise,
}

impl SetTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetTag::Redundant => "redundant",
            SetTag::Concise => "concise",
        }
    }
}

/// Selection metadata for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLabel {
    pub sample_id: String,
    pub set_tag: SetTag,
    pub token_count: u64,
    pub keyword_count: u64,
}

/// On-disk manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsfManifest {
    pub asf_version: u32,
    pub model_id: String,
    pub d: usize,
    pub layers: Vec<usize>,
    pub num_samples: usize,
    pub dtype: String,
    pub layout: String,
    /// File name → lowercase hex CRC-32 (8 digits).
    pub checksums: BTreeMap<String, String>,
}

/// Labeled per-layer activation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    model_id: String,
    d: usize,
    layers: BTreeMap<usize, Vec<f32>>,
    labels: Vec<SampleLabel>,
}

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer}.bin")
}

/// CRC-32 (IEEE) of `bytes` as 8 lowercase hex digits.
pub fn crc32_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

impl ActivationSet {
    /// Assemble a set, checking every invariant.
    ///
    /// `layers` maps a layer id to its row-major `[labels.len(), d]` payload.
    pub fn new(
        model_id: impl Into<String>,
        d: usize,
        layers: BTreeMap<usize, Vec<f32>>,
        labels: Vec<SampleLabel>,
    ) -> Result<Self> {
        let set = ActivationSet {
            model_id: model_id.into(),
            d,
            layers,
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("activation set has no layers".into()));
        }
        if self.d == 0 {
            return Err(Error::Validation("hidden dimension d must be positive".into()));
        }
        let n = self.labels.len();
        for (&l, data) in &self.layers {
            if data.len() != n * self.d {
                return Err(Error::Validation(format!(
                    "layer {l} holds {} values, expected {n} samples x d={}",
                    data.len(),
                    self.d
                )));
            }
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "layer {l} has a non-finite value at sample {}, component {}",
                    pos / self.d,
                    pos % self.d
                )));
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    /// Sorted layer ids.
    pub fn layer_ids(&self) -> Vec<usize> {
        self.layers.keys().copied().collect()
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    /// Raw 32-bit payload of one layer.
    pub fn layer_data(&self, layer: usize) -> Result<&[f32]> {
        self.layers
            .get(&layer)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("layer {layer} not in activation set")))
    }

    /// Row indices carrying `tag`, in manifest order.
    pub fn indices(&self, tag: SetTag) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.set_tag == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, tag: SetTag) -> usize {
        self.labels.iter().filter(|l| l.set_tag == tag).count()
    }

    /// Samples-as-rows matrix for one layer, optionally restricted to one
    /// label. Row order is manifest order.
    pub fn layer_matrix(&self, layer: usize, filter: Option<SetTag>) -> Result<Matrix> {
        let data = self.layer_data(layer)?;
        let d = self.d;
        let rows: Vec<usize> = match filter {
            None => (0..self.num_samples()).collect(),
            Some(tag) => self.indices(tag),
        };
        let mut out = Vec::with_capacity(rows.len() * d);
        for &i in &rows {
            out.extend(data[i * d..(i + 1) * d].iter().map(|&v| f64::from(v)));
        }
        Matrix::new(rows.len(), d, out)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Encode `f32` values as little-endian bytes.
pub fn f32_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode little-endian `f32` values; the length must be a multiple of 4.
pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Persist `set` into `dir` (created if missing).
pub fn write_asf(set: &ActivationSet, dir: &Path) -> Result<AsfManifest> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut checksums = BTreeMap::new();
    for (&l, data) in &set.layers {
        let name = layer_file_name(l);
        let bytes = f32_le_bytes(data);
        checksums.insert(name.clone(), crc32_hex(&bytes));
        write_file(&dir.join(&name), &bytes)?;
    }
    let labels =
        serde_json::to_vec_pretty(&set.labels).map_err(|e| Error::Validation(format!("cannot encode labels: {e}")))?;
    write_file(&dir.join(LABELS_FILE), &labels)?;
    let manifest = AsfManifest {
        asf_version: ASF_VERSION,
        model_id: set.model_id.clone(),
        d: set.d,
        layers: set.layer_ids(),
        num_samples: set.num_samples(),
        dtype: "f32le".into(),
        layout: "row-major".into(),
        checksums,
    };
    let bytes =
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Validation(format!("cannot encode manifest: {e}")))?;
    write_file(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

/// Load and fully validate an ASF directory.
pub fn read_asf(dir: &Path) -> Result<ActivationSet> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: AsfManifest = serde_json::from_slice(&read_file(&mpath)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", mpath.display())))?;
    if manifest.asf_version != ASF_VERSION {
        return Err(Error::Validation(format!(
            "{}: unsupported asf_version {}",
            mpath.display(),
            manifest.asf_version
        )));
    }
    if manifest.dtype != "f32le" {
        return Err(Error::Validation(format!(
            "{}: dtype must be \"f32le\", got {:?}",
            mpath.display(),
            manifest.dtype
        )));
    }
    if manifest.layout != "row-major" {
        return Err(Error::Validation(format!(
            "{}: layout must be \"row-major\", got {:?}",
            mpath.display(),
            manifest.layout
        )));
    }
    if manifest.layers.is_empty() {
        return Err(Error::Validation(format!("{}: layers is empty", mpath.display())));
    }
    if manifest.layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "{}: layers must be strictly increasing",
            mpath.display()
        )));
    }

    let lpath = dir.join(LABELS_FILE);
    let labels: Vec<SampleLabel> = serde_json::from_slice(&read_file(&lpath)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", lpath.display())))?;
    if labels.len() != manifest.num_samples {
        return Err(Error::Validation(format!(
            "{}: {} labels but manifest declares num_samples={}",
            lpath.display(),
            labels.len(),
            manifest.num_samples
        )));
    }

    let expected_bytes = manifest.num_samples * manifest.d * 4;
    let mut layers = BTreeMap::new();
    for &l in &manifest.layers {
        let name = layer_file_name(l);
        let path = dir.join(&name);
        let bytes = read_file(&path)?;
        if bytes.len() != expected_bytes {
            return Err(Error::Validation(format!(
                "{}: {} bytes, expected {} ({} samples x d={} x 4)",
                path.display(),
                bytes.len(),
                expected_bytes,
                manifest.num_samples,
                manifest.d
            )));
        }
        let declared = manifest
            .checksums
            .get(&name)
            .ok_or_else(|| Error::Validation(format!("{}: no checksum for {name}", mpath.display())))?;
        let actual = crc32_hex(&bytes);
        if !declared.eq_ignore_ascii_case(&actual) {
            return Err(Error::CorruptData(format!(
                "{}: checksum {actual} does not match manifest {declared}",
                path.display()
            )));
        }
        layers.insert(l, f32_from_le_bytes(&bytes));
    }
    ActivationSet::new(manifest.model_id, manifest.d, layers, labels).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", dir.display())),
        other => other,
    })
}
