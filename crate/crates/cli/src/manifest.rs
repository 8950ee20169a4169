// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-command run manifest: what was run, on which inputs, producing what.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use steerkit_core::Error;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputChecksum {
    pub path: String,
    pub crc32: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputChecksum>,
    /// Paths relative to `--out`, in write order.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

fn crc_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:08x}", crc32fast::hash(&bytes)))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    /// Record the checksum of an input file, or of every file under an
    /// input directory.
    pub fn add_input(&mut self, path: &Path) -> Result<(), Error> {
        let files = if path.is_dir() {
            files_under(path)?
        } else {
            vec![path.to_path_buf()]
        };
        for f in files {
            let crc32 = crc_file(&f)?;
            self.inputs.push(InputChecksum {
                path: f.to_string_lossy().into_owned(),
                crc32,
            });
        }
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<(), Error> {
        let p = out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises") + "\n";
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}
