//! On-disk cache of raw requirement embeddings, one file per embedder.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::corpus::Example;
use crate::gateway::{embed_all, Embedder};
use crate::jsonl;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    id: String,
    vector: Vec<f64>,
}

/// `embeddings-<digest>.jsonl` under `dir`, where the digest names the embedder fingerprint.
pub fn cache_path(dir: &Path, fingerprint: &str) -> PathBuf {
    let digest = Sha256::digest(fingerprint.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    dir.join(format!("embeddings-{hex}.jsonl"))
}

pub type RawEmbeddings = HashMap<String, Vec<f64>>;

/// Raw embeddings of each example's requirement. Cached vectors are reused;
/// missing ones are computed and appended to the cache file.
pub fn load_or_embed(
    embedder: &dyn Embedder,
    examples: &[Example],
    cache: Option<&Path>,
) -> Result<RawEmbeddings, TrainError> {
    let mut known: RawEmbeddings = HashMap::new();
    if let Some(path) = cache {
        for line in jsonl::read_jsonl_resumable::<CacheLine>(path)? {
            known.insert(line.id, line.vector);
        }
    }
    let missing: Vec<&Example> = examples.iter().filter(|e| !known.contains_key(&e.id)).collect();
    if !missing.is_empty() {
        let texts: Vec<&str> = missing.iter().map(|e| e.requirement.as_str()).collect();
        let vectors = embed_all(embedder, &texts)?;
        let lines: Vec<CacheLine> = missing
            .iter()
            .zip(vectors)
            .map(|(e, vector)| CacheLine {
                id: e.id.clone(),
                vector,
            })
            .collect();
        if let Some(path) = cache {
            jsonl::append_jsonl(path, &lines)?;
        }
        for line in lines {
            known.insert(line.id, line.vector);
        }
    }
    Ok(examples.iter().map(|e| (e.id.clone(), known[&e.id].clone())).collect())
}
