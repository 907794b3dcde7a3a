//! Choosing in-context examples for a test requirement and rendering the prompt.

pub mod prompt;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::gateway::{embed_all, map_bounded, Embedder, GatewayError, Scorer};
use crate::lexical::{rank_order, tokenize, Bm25Index, Bm25Params, LexicalError};
use crate::rng::substream;
use crate::training::{load_or_embed, ProjectionHead, RetrieverCheckpoint, TrainError};
use crate::vector::{dot, is_zero, normalized};

pub use prompt::{parse, render, Prompt, ShotText};

pub const DEFAULT_SHOTS: usize = 3;
pub const MAX_SHOTS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("shot count must be in 1..={MAX_SHOTS}, got {0}")]
    InvalidShotCount(usize),
    #[error("unknown example id `{0}`")]
    UnknownId(String),
    #[error("at least one shot is required")]
    NoShots,
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub id: String,
    pub similarity: f64,
}

/// One line of a selections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub test_id: String,
    pub strategy: Strategy,
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cosine over projected embeddings from a trained checkpoint.
    Trained,
    Random,
    Bm25,
    EmbedTopk,
    Uncertainty,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Trained,
        Strategy::Random,
        Strategy::Bm25,
        Strategy::EmbedTopk,
        Strategy::Uncertainty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Trained => "trained",
            Strategy::Random => "random",
            Strategy::Bm25 => "bm25",
            Strategy::EmbedTopk => "embed_topk",
            Strategy::Uncertainty => "uncertainty",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotOrder {
    /// Least similar first; the most similar shot sits next to the test requirement.
    #[default]
    Asc,
    Desc,
}

impl std::str::FromStr for ShotOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asc" => Ok(ShotOrder::Asc),
            "desc" => Ok(ShotOrder::Desc),
            _ => Err(format!("shot order must be `asc` or `desc`, got `{s}`")),
        }
    }
}

fn default_shots() -> usize {
    DEFAULT_SHOTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    #[serde(default = "default_shots")]
    pub r: usize,
    #[serde(default)]
    pub shot_order: ShotOrder,
    pub strategies: Vec<Strategy>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            r: DEFAULT_SHOTS,
            shot_order: ShotOrder::Asc,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

pub fn check_shot_count(r: usize) -> Result<(), SelectionError> {
    if (1..=MAX_SHOTS).contains(&r) {
        Ok(())
    } else {
        Err(SelectionError::InvalidShotCount(r))
    }
}

fn clamp_r(r: usize, n: usize) -> usize {
    if r > n {
        tracing::warn!(requested = r, available = n, "shot count exceeds pool size; clamped");
    }
    r.min(n)
}

/// Encoded pool vectors. Rows are unit-norm, or all zero when the projection vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub checkpoint_fingerprint: String,
}

impl EmbeddingIndex {
    /// Rows encoded through `head`; `None` means the raw vectors, normalized.
    pub fn from_raw(
        pool: &[Example],
        raw: &HashMap<String, Vec<f64>>,
        head: Option<&ProjectionHead>,
        fingerprint: &str,
    ) -> Result<Self, SelectionError> {
        let mut vectors = Vec::with_capacity(pool.len());
        for e in pool {
            let v = raw.get(&e.id).ok_or_else(|| SelectionError::UnknownId(e.id.clone()))?;
            vectors.push(encode_with(head, v)?);
        }
        Ok(EmbeddingIndex {
            ids: pool.iter().map(|e| e.id.clone()).collect(),
            vectors,
            checkpoint_fingerprint: fingerprint.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn zero_rows(&self) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.vectors)
            .filter(|(_, v)| is_zero(v))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Top `r` rows by cosine against an already encoded query, ties by id.
    pub fn nearest(&self, query: &[f64], r: usize) -> Vec<Shot> {
        let r = clamp_r(r, self.len());
        let mut scored: Vec<Shot> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| Shot {
                id: id.clone(),
                similarity: dot(query, v),
            })
            .collect();
        scored.sort_by(|a, b| rank_order(a.similarity, &a.id, b.similarity, &b.id));
        scored.truncate(r);
        scored
    }
}

fn encode_with(head: Option<&ProjectionHead>, raw: &[f64]) -> Result<Vec<f64>, SelectionError> {
    match head {
        Some(h) => Ok(h.encode(raw)?),
        None => Ok(normalized(raw).unwrap_or_else(|| vec![0.0; raw.len()])),
    }
}

/// Encodes every pool requirement through the checkpoint's head, in pool order.
pub fn build_embedding_index(
    pool: &[Example],
    embedder: &dyn Embedder,
    checkpoint: &RetrieverCheckpoint,
    force: bool,
    cache: Option<&Path>,
) -> Result<EmbeddingIndex, SelectionError> {
    checkpoint.check_fingerprint(&embedder.fingerprint(), force)?;
    let raw = load_or_embed(embedder, pool, cache)?;
    EmbeddingIndex::from_raw(pool, &raw, Some(&checkpoint.head), &checkpoint.embedder_fingerprint)
}

/// The `r` pool examples most similar to `test_requirement` under the trained head.
pub fn retrieve(
    index: &EmbeddingIndex,
    test_requirement: &str,
    r: usize,
    checkpoint: &RetrieverCheckpoint,
    embedder: &dyn Embedder,
) -> Result<Vec<Shot>, SelectionError> {
    if r == 0 {
        return Err(SelectionError::InvalidShotCount(r));
    }
    let raw = embedder.embed(test_requirement)?;
    let query = checkpoint.head.encode(&raw)?;
    Ok(index.nearest(&query, r))
}

/// Zero-shot mean log-probability of each example's own code, lowest first.
/// The result is independent of any test requirement.
pub fn uncertainty_ranking(pool: &[Example], scorer: &dyn Scorer) -> Result<Vec<Shot>, SelectionError> {
    let scores = map_bounded(pool, scorer.max_concurrency(), |e| {
        scorer
            .score_continuation(&render(&[], &e.requirement), &e.code)
            .map(|s| s.mean())
    });
    let mut shots = Vec::with_capacity(pool.len());
    for (e, s) in pool.iter().zip(scores) {
        shots.push(Shot {
            id: e.id.clone(),
            // Higher means more uncertain.
            similarity: -s?,
        });
    }
    shots.sort_by(|a, b| rank_order(a.similarity, &a.id, b.similarity, &b.id));
    Ok(shots)
}

/// A ready-to-query selection strategy.
pub enum Selector<'a> {
    Random {
        pool_ids: Vec<String>,
        seed: u64,
    },
    Bm25 {
        index: Bm25Index,
    },
    /// `head = None` is the frozen-embedder baseline.
    Dense {
        index: EmbeddingIndex,
        head: Option<ProjectionHead>,
        embedder: &'a dyn Embedder,
    },
    Static {
        ranking: Vec<Shot>,
    },
}

impl<'a> Selector<'a> {
    pub fn random(pool: &[Example], seed: u64) -> Self {
        Selector::Random {
            pool_ids: pool.iter().map(|e| e.id.clone()).collect(),
            seed,
        }
    }

    pub fn bm25(pool: &[Example]) -> Result<Self, SelectionError> {
        Ok(Selector::Bm25 {
            index: Bm25Index::over_requirements(pool, Bm25Params::default())?,
        })
    }

    pub fn embed_topk(
        pool: &[Example],
        embedder: &'a dyn Embedder,
        cache: Option<&Path>,
    ) -> Result<Self, SelectionError> {
        let raw = load_or_embed(embedder, pool, cache)?;
        Ok(Selector::Dense {
            index: EmbeddingIndex::from_raw(pool, &raw, None, &embedder.fingerprint())?,
            head: None,
            embedder,
        })
    }

    pub fn trained(index: EmbeddingIndex, checkpoint: &RetrieverCheckpoint, embedder: &'a dyn Embedder) -> Self {
        Selector::Dense {
            index,
            head: Some(checkpoint.head.clone()),
            embedder,
        }
    }

    pub fn uncertainty(pool: &[Example], scorer: &dyn Scorer) -> Result<Self, SelectionError> {
        Ok(Selector::Static {
            ranking: uncertainty_ranking(pool, scorer)?,
        })
    }

    fn pool_len(&self) -> usize {
        match self {
            Selector::Random { pool_ids, .. } => pool_ids.len(),
            Selector::Bm25 { index } => index.len(),
            Selector::Dense { index, .. } => index.len(),
            Selector::Static { ranking } => ranking.len(),
        }
    }

    /// Shots for each test in input order, each in retrieval order
    /// (similarity descending, ties by id).
    pub fn select_all(&self, tests: &[Example], r: usize) -> Result<Vec<Vec<Shot>>, SelectionError> {
        check_shot_count(r)?;
        if self.pool_len() == 0 {
            return Err(SelectionError::EmptyPool);
        }
        let r = clamp_r(r, self.pool_len());
        match self {
            Selector::Random { pool_ids, seed } => Ok(tests
                .iter()
                .map(|t| {
                    let mut rng = substream(*seed, &["random", &t.id]);
                    index::sample(&mut rng, pool_ids.len(), r)
                        .into_iter()
                        .map(|i| Shot {
                            id: pool_ids[i].clone(),
                            similarity: 0.0,
                        })
                        .collect()
                })
                .collect()),
            Selector::Bm25 { index } => tests
                .iter()
                .map(|t| {
                    let hits = index.top_t(&tokenize(&t.requirement), r, &BTreeSet::new())?;
                    Ok(hits
                        .into_iter()
                        .map(|h| Shot {
                            id: h.id,
                            similarity: h.score,
                        })
                        .collect())
                })
                .collect(),
            Selector::Dense { index, head, embedder } => {
                let texts: Vec<&str> = tests.iter().map(|t| t.requirement.as_str()).collect();
                let raws = embed_all(*embedder, &texts)?;
                raws.iter()
                    .map(|raw| Ok(index.nearest(&encode_with(head.as_ref(), raw)?, r)))
                    .collect()
            }
            Selector::Static { ranking } => Ok(vec![ranking[..r].to_vec(); tests.len()]),
        }
    }
}

/// Renders the shots around `test_requirement`. With [`ShotOrder::Asc`] the
/// most similar shot is placed last.
pub fn assemble_prompt(
    shots: &[Shot],
    pool: &HashMap<&str, &Example>,
    test_requirement: &str,
    order: ShotOrder,
) -> Result<Prompt, SelectionError> {
    if shots.is_empty() {
        return Err(SelectionError::NoShots);
    }
    let mut ordered: Vec<&Shot> = shots.iter().collect();
    ordered.sort_by(|a, b| rank_order(a.similarity, &a.id, b.similarity, &b.id));
    if order == ShotOrder::Asc {
        ordered.reverse();
    }
    let texts = ordered
        .into_iter()
        .map(|s| {
            let e = pool
                .get(s.id.as_str())
                .ok_or_else(|| SelectionError::UnknownId(s.id.clone()))?;
            Ok(ShotText {
                requirement: e.requirement.clone(),
                code: e.code.clone(),
            })
        })
        .collect::<Result<Vec<_>, SelectionError>>()?;
    Ok(Prompt::new(texts, test_requirement))
}

pub fn pool_map(pool: &[Example]) -> HashMap<&str, &Example> {
    pool.iter().map(|e| (e.id.as_str(), e)).collect()
}

/// Orders selections by test id then strategy, the canonical file order.
pub fn sort_selections(selections: &mut [Selection]) {
    selections.sort_by(|a, b| match a.test_id.cmp(&b.test_id) {
        Ordering::Equal => a.strategy.cmp(&b.strategy),
        o => o,
    });
}
