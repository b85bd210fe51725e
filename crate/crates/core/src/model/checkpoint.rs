//! JSON checkpoint container: config, named tensors, optimizer state and the
//! hash of the vocabulary the model was trained against.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::tensor::Mat;
use super::transformer::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

const FORMAT: &str = "textid-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    vocab_hash: String,
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
    optimizer: Option<AdamState>,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    optimizer: Option<&AdamState>,
    vocab_hash: &str,
) -> Result<()> {
    if !params.tensors.iter().all(Mat::is_finite) {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        vocab_hash: vocab_hash.into(),
        config: params.config.clone(),
        tensors: params
            .specs()
            .iter()
            .zip(&params.tensors)
            .map(|(s, t)| NamedTensor {
                name: s.name.clone(),
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect(),
        optimizer: optimizer.cloned(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, failing when it was trained against a different
/// vocabulary than `vocab_hash`.
pub fn load_checkpoint(path: &Path, vocab_hash: &str) -> Result<(ModelParams, Option<AdamState>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    if file.vocab_hash != vocab_hash {
        return Err(Error::VocabularyMismatch {
            expected: vocab_hash.into(),
            found: file.vocab_hash,
        });
    }
    let layout_names: Vec<String> = super::transformer::Layout::new(&file.config)
        .specs
        .into_iter()
        .map(|s| s.name)
        .collect();
    let names: Vec<&String> = file.tensors.iter().map(|t| &t.name).collect();
    if names.len() != layout_names.len() || names.iter().zip(&layout_names).any(|(a, b)| *a != b) {
        return Err(Error::Checkpoint(format!(
            "{}: tensor names do not match the model layout",
            path.display()
        )));
    }
    let tensors = file
        .tensors
        .into_iter()
        .map(|t| {
            if t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!("{}: bad tensor size", t.name)));
            }
            Ok(Mat::from_vec(t.rows, t.cols, t.data))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(file.config, tensors)?;
    Ok((params, file.optimizer))
}
