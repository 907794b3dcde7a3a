//! Two-stage labeling of candidate examples.
//!
//! Stage one keeps the `t` BM25-nearest pool examples to each anchor's
//! requirement. Stage two scores each of them with the LLM: either the mean
//! log-probability of the anchor's ground-truth code given a one-shot prompt
//! built from the candidate ([`metric_m`]) or the BLEU of a greedy generation
//! ([`match_bleu`]). The top `z` become positives, the bottom `v` negatives.

mod bleu;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::gateway::{map_bounded, GatewayError, GenerationParams, Generator, Scorer};
use crate::jsonl::{self, JsonlError};
use crate::lexical::{rank_order, tokenize, Bm25Index, Bm25Params, LexicalError};
use crate::selection::prompt::{render, ShotText};

pub use bleu::{bleu4, BLEU_SMOOTHING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Probability,
    MatchBleu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(rename = "id")]
    pub candidate_id: String,
    pub score: f64,
    #[serde(skip, default = "default_kind")]
    pub scorer_kind: ScorerKind,
}

fn default_kind() -> ScorerKind {
    ScorerKind::Probability
}

/// One labels-file line: an anchor with its stage-one set and its positive
/// and negative candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledAnchor {
    pub anchor_id: String,
    pub scorer_kind: ScorerKind,
    #[serde(rename = "stage_one")]
    pub stage_one_ids: Vec<String>,
    pub positives: Vec<ScoredCandidate>,
    pub negatives: Vec<ScoredCandidate>,
}

impl LabeledAnchor {
    /// Checks the label invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.stage_one_ids.contains(&self.anchor_id) {
            return Err(format!("anchor {} appears in its own stage-one set", self.anchor_id));
        }
        let pos: BTreeSet<&str> = self.positives.iter().map(|c| c.candidate_id.as_str()).collect();
        if self.negatives.iter().any(|c| pos.contains(c.candidate_id.as_str())) {
            return Err(format!("anchor {}: positives and negatives overlap", self.anchor_id));
        }
        let min_pos = self.positives.iter().map(|c| c.score).fold(f64::INFINITY, f64::min);
        let max_neg = self.negatives.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        if min_pos < max_neg {
            return Err(format!("anchor {}: a negative outscores a positive", self.anchor_id));
        }
        Ok(())
    }

    fn restore_kind(mut self) -> Self {
        for c in self.positives.iter_mut().chain(self.negatives.iter_mut()) {
            c.scorer_kind = self.scorer_kind;
        }
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelingError {
    #[error("need z >= 1 and v >= 1 (got z={z}, v={v})")]
    InvalidSizes { z: usize, v: usize },
    #[error("z + v = {needed} exceeds the {available} scored candidates")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("existing labels file was produced with scorer {found:?}, requested {requested:?}")]
    KindMismatch { found: ScorerKind, requested: ScorerKind },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

fn one_shot_prompt(anchor: &Example, candidate: &Example) -> String {
    render(
        &[ShotText {
            requirement: candidate.requirement.clone(),
            code: candidate.code.clone(),
        }],
        &anchor.requirement,
    )
}

/// Mean log-probability of the anchor's code given a one-shot prompt made of
/// the candidate followed by the anchor's requirement. Normalized by the
/// provider's token count.
pub fn metric_m(anchor: &Example, candidate: &Example, scorer: &dyn Scorer) -> Result<f64, GatewayError> {
    let result = scorer.score_continuation(&one_shot_prompt(anchor, candidate), &anchor.code)?;
    if result.token_count == 0 {
        return Err(GatewayError::Malformed("scorer returned zero tokens".into()));
    }
    Ok(result.mean())
}

/// BLEU-4 between a greedy one-shot generation and the anchor's code.
pub fn match_bleu(
    anchor: &Example,
    candidate: &Example,
    generator: &dyn Generator,
    max_tokens: usize,
) -> Result<f64, GatewayError> {
    let out = generator.generate(
        &one_shot_prompt(anchor, candidate),
        &GenerationParams::greedy(max_tokens),
    )?;
    let program = out.into_iter().next().unwrap_or_default();
    Ok(bleu4(&tokenize(&program), &tokenize(&anchor.code)))
}

/// Ranks by score descending (ties by id ascending); the first `z` are
/// positives and the last `v` negatives.
pub fn label_anchor(
    anchor_id: &str,
    stage_one_ids: Vec<String>,
    mut scored: Vec<ScoredCandidate>,
    z: usize,
    v: usize,
) -> Result<LabeledAnchor, LabelingError> {
    if z == 0 || v == 0 {
        return Err(LabelingError::InvalidSizes { z, v });
    }
    if z + v > scored.len() {
        return Err(LabelingError::InsufficientCandidates {
            needed: z + v,
            available: scored.len(),
        });
    }
    let scorer_kind = scored.first().map(|c| c.scorer_kind).unwrap_or(ScorerKind::Probability);
    scored.sort_by(|a, b| rank_order(a.score, &a.candidate_id, b.score, &b.candidate_id));
    let negatives = scored.split_off(scored.len() - v);
    scored.truncate(z);
    Ok(LabeledAnchor {
        anchor_id: anchor_id.to_string(),
        scorer_kind,
        stage_one_ids,
        positives: scored,
        negatives,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub t: usize,
    pub z: usize,
    pub v: usize,
    pub scorer_kind: ScorerKind,
    #[serde(default = "default_k1")]
    pub bm25_k1: f64,
    #[serde(default = "default_b")]
    pub bm25_b: f64,
    /// Generation budget for match-BLEU.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_k1() -> f64 {
    Bm25Params::default().k1
}

fn default_b() -> f64 {
    Bm25Params::default().b
}

fn default_max_tokens() -> usize {
    500
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            t: 50,
            z: 5,
            v: 5,
            scorer_kind: ScorerKind::Probability,
            bm25_k1: default_k1(),
            bm25_b: default_b(),
            max_tokens: default_max_tokens(),
        }
    }
}

/// The LLM signal used in stage two.
#[derive(Clone, Copy)]
pub enum Estimator<'a> {
    Probability(&'a dyn Scorer),
    MatchBleu(&'a dyn Generator),
}

impl Estimator<'_> {
    fn kind(&self) -> ScorerKind {
        match self {
            Estimator::Probability(_) => ScorerKind::Probability,
            Estimator::MatchBleu(_) => ScorerKind::MatchBleu,
        }
    }

    fn concurrency(&self) -> usize {
        match self {
            Estimator::Probability(s) => s.max_concurrency(),
            Estimator::MatchBleu(g) => g.max_concurrency(),
        }
    }

    fn score(&self, anchor: &Example, candidate: &Example, max_tokens: usize) -> Result<f64, GatewayError> {
        match self {
            Estimator::Probability(s) => metric_m(anchor, candidate, *s),
            Estimator::MatchBleu(g) => match_bleu(anchor, candidate, *g, max_tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedAnchor {
    pub anchor_id: String,
    pub scored: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LabelingOutcome {
    /// Labels in pool order, including any resumed from disk.
    pub labels: Vec<LabeledAnchor>,
    pub dropped: Vec<DroppedAnchor>,
    pub scorer_calls: usize,
    pub provider_failures: usize,
    pub resumed: usize,
}

enum AnchorResult {
    Labeled(LabeledAnchor, usize),
    Dropped(DroppedAnchor, usize, usize),
}

fn label_one(
    anchor: &Example,
    pool: &[Example],
    by_id: &HashMap<&str, usize>,
    index: &Bm25Index,
    cfg: &LabelConfig,
    estimator: Estimator<'_>,
) -> Result<AnchorResult, LabelingError> {
    let exclude: BTreeSet<&str> = [anchor.id.as_str()].into_iter().collect();
    let stage_one: Vec<String> = index
        .top_t(&tokenize(&anchor.requirement), cfg.t, &exclude)?
        .into_iter()
        .map(|h| h.id)
        .collect();
    let mut scored = Vec::with_capacity(stage_one.len());
    let mut errors = Vec::new();
    let mut provider_failures = 0;
    for id in &stage_one {
        let candidate = &pool[by_id[id.as_str()]];
        match estimator.score(anchor, candidate, cfg.max_tokens) {
            Ok(score) if score.is_finite() => scored.push(ScoredCandidate {
                candidate_id: id.clone(),
                score,
                scorer_kind: estimator.kind(),
            }),
            Ok(score) => errors.push(format!("{id}: non-finite score {score}")),
            Err(e) => {
                if e.is_provider_failure() {
                    provider_failures += 1;
                }
                errors.push(format!("{id}: {e}"));
            }
        }
    }
    let calls = stage_one.len();
    if scored.len() < cfg.z + cfg.v {
        tracing::warn!(
            anchor = %anchor.id,
            scored = scored.len(),
            needed = cfg.z + cfg.v,
            "dropping anchor with too few scored candidates"
        );
        return Ok(AnchorResult::Dropped(
            DroppedAnchor {
                anchor_id: anchor.id.clone(),
                scored: scored.len(),
                errors,
            },
            calls,
            provider_failures,
        ));
    }
    for e in &errors {
        tracing::warn!(anchor = %anchor.id, "candidate excluded: {e}");
    }
    let labeled = label_anchor(&anchor.id, stage_one, scored, cfg.z, cfg.v)?;
    Ok(AnchorResult::Labeled(labeled, calls))
}

/// Reads a labels file, restoring per-candidate scorer kinds.
pub fn read_labels(path: &Path) -> Result<Vec<LabeledAnchor>, JsonlError> {
    Ok(jsonl::read_jsonl::<LabeledAnchor>(path)?
        .into_iter()
        .map(LabeledAnchor::restore_kind)
        .collect())
}

/// Labels every pool example.
///
/// When `out` is given the labels file is append-structured: completed
/// anchors already in it are skipped, new ones are appended as they finish,
/// and the file is finally rewritten in pool order so identical inputs always
/// produce identical bytes.
pub fn build_labeled_dataset(
    pool: &[Example],
    cfg: &LabelConfig,
    estimator: Estimator<'_>,
    out: Option<&Path>,
) -> Result<LabelingOutcome, LabelingError> {
    if cfg.z == 0 || cfg.v == 0 {
        return Err(LabelingError::InvalidSizes { z: cfg.z, v: cfg.v });
    }
    let index = Bm25Index::over_requirements(
        pool,
        Bm25Params {
            k1: cfg.bm25_k1,
            b: cfg.bm25_b,
        },
    )?;
    let by_id: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();

    let mut done: HashMap<String, LabeledAnchor> = HashMap::new();
    if let Some(path) = out {
        for label in jsonl::read_jsonl_resumable::<LabeledAnchor>(path)? {
            if label.scorer_kind != estimator.kind() {
                return Err(LabelingError::KindMismatch {
                    found: label.scorer_kind,
                    requested: estimator.kind(),
                });
            }
            if by_id.contains_key(label.anchor_id.as_str()) {
                done.insert(label.anchor_id.clone(), label.restore_kind());
            }
        }
    }
    let mut outcome = LabelingOutcome {
        resumed: done.len(),
        ..Default::default()
    };

    let pending: Vec<&Example> = pool.iter().filter(|e| !done.contains_key(&e.id)).collect();
    let width = estimator.concurrency().max(1);
    for chunk in pending.chunks(width * 4) {
        let results = map_bounded(chunk, width, |anchor| {
            label_one(anchor, pool, &by_id, &index, cfg, estimator)
        });
        let mut fresh = Vec::new();
        for r in results {
            match r? {
                AnchorResult::Labeled(label, calls) => {
                    outcome.scorer_calls += calls;
                    fresh.push(label);
                }
                AnchorResult::Dropped(d, calls, failures) => {
                    outcome.scorer_calls += calls;
                    outcome.provider_failures += failures;
                    outcome.dropped.push(d);
                }
            }
        }
        if let Some(path) = out {
            jsonl::append_jsonl(path, &fresh)?;
        }
        for label in fresh {
            done.insert(label.anchor_id.clone(), label);
        }
    }

    outcome.labels = pool.iter().filter_map(|e| done.remove(&e.id)).collect();
    if let Some(path) = out {
        jsonl::write_jsonl(path, &outcome.labels)?;
    }
    Ok(outcome)
}
