use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ProjectionHead, TrainConfig, TrainError};
use crate::jsonl;

const FORMAT: &str = "lail-retriever-checkpoint/1";

/// Trained head plus everything needed to reuse it elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverCheckpoint {
    pub head: ProjectionHead,
    pub tau: f64,
    pub embedder_fingerprint: String,
    pub train_config: TrainConfig,
    pub source_dataset: String,
    pub source_scorer: String,
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    tool_version: String,
    d_in: usize,
    d_out: usize,
    /// Little-endian f64, row-major d_out x d_in, base64.
    weights: String,
    bias: Option<String>,
    tau: f64,
    embedder_fingerprint: String,
    train_config: TrainConfig,
    source_dataset: String,
    source_scorer: String,
    epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>, TrainError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| TrainError::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(TrainError::Checkpoint(
            "array length is not a multiple of 8 bytes".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl RetrieverCheckpoint {
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<(), TrainError> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            tool_version: crate::TOOL_VERSION.into(),
            d_in: self.head.d_in,
            d_out: self.head.d_out,
            weights: encode_f64s(&self.head.weights),
            bias: self.head.bias.as_deref().map(encode_f64s),
            tau: self.tau,
            embedder_fingerprint: self.embedder_fingerprint.clone(),
            train_config: self.train_config.clone(),
            source_dataset: self.source_dataset.clone(),
            source_scorer: self.source_scorer.clone(),
            epoch_losses: self.epoch_losses.clone(),
            config_hash: config_hash.map(str::to_string),
        };
        jsonl::write_json(path, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file: CheckpointFile = jsonl::read_json(path)?;
        if file.format != FORMAT {
            return Err(TrainError::Checkpoint(format!("unsupported format `{}`", file.format)));
        }
        let weights = decode_f64s(&file.weights)?;
        let bias = file.bias.as_deref().map(decode_f64s).transpose()?;
        let head = ProjectionHead::new(file.d_in, file.d_out, weights, bias)?;
        Ok(RetrieverCheckpoint {
            head,
            tau: file.tau,
            embedder_fingerprint: file.embedder_fingerprint,
            train_config: file.train_config,
            source_dataset: file.source_dataset,
            source_scorer: file.source_scorer,
            epoch_losses: file.epoch_losses,
        })
    }

    /// Errors when `fingerprint` differs from the training embedder unless `force`.
    pub fn check_fingerprint(&self, fingerprint: &str, force: bool) -> Result<(), TrainError> {
        if self.embedder_fingerprint == fingerprint {
            return Ok(());
        }
        if force {
            tracing::warn!(
                checkpoint = %self.embedder_fingerprint,
                embedder = %fingerprint,
                "embedder fingerprint mismatch overridden"
            );
            return Ok(());
        }
        Err(TrainError::FingerprintMismatch {
            checkpoint: self.embedder_fingerprint.clone(),
            embedder: fingerprint.to_string(),
        })
    }
}
