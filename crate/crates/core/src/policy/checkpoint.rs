//! Checkpoints: `<name>.bin` holds the flat parameter vector as
//! little-endian f32, `<name>.json` describes layout, config and the feature
//! normalizer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureNormalizer, ParamLayout, Policy, PolicyConfig};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad checkpoint: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: u32,
    config: PolicyConfig,
    layout: ParamLayout,
    param_count: usize,
    normalizer: FeatureNormalizer,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>, CheckpointError> {
    if bytes.len() % 4 != 0 {
        return Err(CheckpointError::Format(format!(
            "{} bytes is not a whole number of f32",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl Policy {
    /// Writes `path` (parameters) and its `.json` sidecar. Parameters are
    /// stored as f32.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, encode_f32(&self.params)).map_err(io_err(path))?;
        let side = Sidecar {
            format: 1,
            config: self.config,
            layout: self.layout.clone(),
            param_count: self.params.len(),
            normalizer: self.normalizer.clone(),
        };
        let sp = sidecar_path(path);
        let text = serde_json::to_string_pretty(&side).map_err(|e| CheckpointError::Format(e.to_string()))?;
        fs::write(&sp, text).map_err(io_err(&sp))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let sp = sidecar_path(path);
        let text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        side.config
            .validate()
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let expected = ParamLayout::new(&side.config);
        if expected != side.layout {
            return Err(CheckpointError::Format("layout does not match config".into()));
        }
        let params = decode_f32(&fs::read(path).map_err(io_err(path))?)?;
        if params.len() != side.param_count || params.len() != expected.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(CheckpointError::Format("non-finite parameter".into()));
        }
        Ok(Policy {
            config: side.config,
            layout: side.layout,
            params,
            normalizer: side.normalizer,
        })
    }
}
