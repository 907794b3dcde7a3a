//! Contrastive training of a projection head over frozen embeddings.
//!
//! Each epoch, every labeled anchor draws one positive from its positive
//! set, `tau_ne` hard negatives from its negative set and
//! `negatives_total - tau_ne` random negatives from the pool minus its
//! stage-one set. The head is updated with Adam on the mean InfoNCE loss of
//! each minibatch. All sampling streams are keyed by (seed, epoch, anchor id).

mod adam;
mod cache;
mod checkpoint;
mod head;
mod loss;

use std::collections::{BTreeSet, HashMap};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::gateway::{Embedder, GatewayError};
use crate::jsonl::JsonlError;
use crate::labeling::LabeledAnchor;
use crate::rng::substream;

pub use adam::Adam;
pub use cache::{cache_path, load_or_embed, RawEmbeddings};
pub use checkpoint::{decode_f64s, encode_f64s, RetrieverCheckpoint};
pub use head::ProjectionHead;
pub use loss::{infonce_grad, infonce_loss, HeadGradient, InfoNce};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("vector is not unit-norm (norm {0})")]
    NotNormalized(f64),
    #[error("at least one negative is required")]
    NoNegatives,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("anchor {0} has no positives")]
    EmptyPositives(String),
    #[error("anchor {anchor} has {have} negatives but tau_ne = {need}")]
    TooFewNegatives { anchor: String, have: usize, need: usize },
    #[error("labels reference id `{0}` that is not in the pool")]
    UnknownId(String),
    #[error("no labeled anchors to train on")]
    NoAnchors,
    #[error("checkpoint embedder `{checkpoint}` does not match embedder `{embedder}`")]
    FingerprintMismatch { checkpoint: String, embedder: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

fn default_true() -> bool {
    true
}

fn default_init_scale() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    /// Size of each anchor's negative set.
    pub negatives_total: usize,
    /// How many of those come from the labeled (hard) negatives.
    pub tau_ne: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d_out: usize,
    #[serde(default = "default_true")]
    pub denominator_includes_positive: bool,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.07,
            negatives_total: 64,
            tau_ne: 1,
            learning_rate: 5e-5,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            d_out: 128,
            denominator_includes_positive: true,
            bias: true,
            init_scale: default_init_scale(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.negatives_total == 0 || self.tau_ne == 0 {
            return bad("negatives_total and tau_ne must be positive".into());
        }
        if self.tau_ne > self.negatives_total {
            return bad(format!(
                "tau_ne ({}) exceeds negatives_total ({})",
                self.tau_ne, self.negatives_total
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_out == 0 {
            return bad("batch_size, epochs and d_out must be positive".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive".into());
        }
        Ok(())
    }

    pub fn loss(&self) -> InfoNce {
        InfoNce {
            tau: self.tau,
            include_positive: self.denominator_includes_positive,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    pub source_scorer: String,
}

struct Prepared<'a> {
    anchor_id: &'a str,
    positives: Vec<&'a str>,
    hard: Vec<&'a str>,
    /// Pool ids outside the anchor's stage-one set, in pool order.
    random_pool: Vec<&'a str>,
    random_count: usize,
}

/// One anchor's sampled training triple for `epoch`.
pub(crate) struct Draw<'a> {
    pub positive: &'a str,
    pub negatives: Vec<&'a str>,
}

impl<'a> Prepared<'a> {
    fn draw(&self, seed: u64, epoch: usize, tau_ne: usize) -> Draw<'a> {
        let mut rng = substream(seed, &["sample", &epoch.to_string(), self.anchor_id]);
        let positive = self.positives[rng.random_range(0..self.positives.len())];
        let mut negatives: Vec<&str> = index::sample(&mut rng, self.hard.len(), tau_ne)
            .into_iter()
            .map(|i| self.hard[i])
            .collect();
        negatives.extend(
            index::sample(&mut rng, self.random_pool.len(), self.random_count)
                .into_iter()
                .map(|i| self.random_pool[i]),
        );
        Draw { positive, negatives }
    }
}

fn prepare<'a>(
    labels: &'a [LabeledAnchor],
    pool: &'a [Example],
    cfg: &TrainConfig,
) -> Result<Vec<Prepared<'a>>, TrainError> {
    let pool_ids: BTreeSet<&str> = pool.iter().map(|e| e.id.as_str()).collect();
    let mut sorted: Vec<&LabeledAnchor> = labels.iter().collect();
    sorted.sort_by(|a, b| a.anchor_id.cmp(&b.anchor_id));
    let wanted_random = cfg.negatives_total - cfg.tau_ne;
    let mut clamped = 0usize;
    let mut out = Vec::with_capacity(sorted.len());
    for label in sorted {
        for id in std::iter::once(&label.anchor_id)
            .chain(label.positives.iter().map(|c| &c.candidate_id))
            .chain(label.negatives.iter().map(|c| &c.candidate_id))
        {
            if !pool_ids.contains(id.as_str()) {
                return Err(TrainError::UnknownId(id.clone()));
            }
        }
        if label.positives.is_empty() {
            return Err(TrainError::EmptyPositives(label.anchor_id.clone()));
        }
        if label.negatives.len() < cfg.tau_ne {
            return Err(TrainError::TooFewNegatives {
                anchor: label.anchor_id.clone(),
                have: label.negatives.len(),
                need: cfg.tau_ne,
            });
        }
        let stage_one: BTreeSet<&str> = label
            .stage_one_ids
            .iter()
            .map(String::as_str)
            .chain([label.anchor_id.as_str()])
            .chain(label.positives.iter().map(|c| c.candidate_id.as_str()))
            .chain(label.negatives.iter().map(|c| c.candidate_id.as_str()))
            .collect();
        let random_pool: Vec<&str> = pool
            .iter()
            .map(|e| e.id.as_str())
            .filter(|id| !stage_one.contains(id))
            .collect();
        let random_count = wanted_random.min(random_pool.len());
        if random_count < wanted_random {
            clamped += 1;
        }
        out.push(Prepared {
            anchor_id: &label.anchor_id,
            positives: label.positives.iter().map(|c| c.candidate_id.as_str()).collect(),
            hard: label.negatives.iter().map(|c| c.candidate_id.as_str()).collect(),
            random_pool,
            random_count,
        });
    }
    if clamped > 0 {
        tracing::warn!(
            anchors = clamped,
            wanted = wanted_random,
            "random-negative pool smaller than requested; clamped"
        );
    }
    Ok(out)
}

/// Trains a head on precomputed raw embeddings of every pool example.
pub fn train_on_embeddings(
    labels: &[LabeledAnchor],
    pool: &[Example],
    raw: &RawEmbeddings,
    embedder_fingerprint: &str,
    cfg: &TrainConfig,
    provenance: &Provenance,
) -> Result<RetrieverCheckpoint, TrainError> {
    cfg.validate()?;
    let prepared = prepare(labels, pool, cfg)?;
    if prepared.is_empty() {
        return Err(TrainError::NoAnchors);
    }
    let d_in = raw
        .get(&pool[0].id)
        .map(Vec::len)
        .ok_or_else(|| TrainError::UnknownId(pool[0].id.clone()))?;
    let mut vectors: HashMap<&str, &[f64]> = HashMap::with_capacity(pool.len());
    for e in pool {
        let v = raw.get(&e.id).ok_or_else(|| TrainError::UnknownId(e.id.clone()))?;
        if v.len() != d_in {
            return Err(TrainError::Dimension {
                expected: d_in,
                got: v.len(),
            });
        }
        vectors.insert(e.id.as_str(), v.as_slice());
    }

    let mut head = ProjectionHead::random(
        d_in,
        cfg.d_out,
        cfg.init_scale,
        cfg.bias,
        &mut substream(cfg.seed, &["init"]),
    );
    let mut adam = Adam::new(head.parameter_count(), cfg.learning_rate);
    let objective = cfg.loss();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut substream(cfg.seed, &["shuffle", &epoch.to_string()]));
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = HeadGradient::zeros_like(&head);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &prepared[i];
                let draw = p.draw(cfg.seed, epoch, cfg.tau_ne);
                let negs: Vec<&[f64]> = draw.negatives.iter().map(|id| vectors[id]).collect();
                let loss = objective.accumulate(
                    &head,
                    vectors[p.anchor_id],
                    vectors[draw.positive],
                    &negs,
                    scale,
                    &mut grad,
                );
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite(format!("loss at epoch {epoch}")));
                }
                epoch_total += loss;
            }
            if !grad.is_finite() {
                return Err(TrainError::NonFinite(format!("gradient at epoch {epoch}")));
            }
            let params = head.weights.iter_mut().chain(head.bias.iter_mut().flatten());
            let grads = grad.weights.iter().chain(grad.bias.iter().flatten()).copied();
            adam.step(params, grads);
        }
        let mean = epoch_total / prepared.len() as f64;
        tracing::info!(epoch, mean_loss = mean, "epoch complete");
        epoch_losses.push(mean);
    }

    Ok(RetrieverCheckpoint {
        head,
        tau: cfg.tau,
        embedder_fingerprint: embedder_fingerprint.to_string(),
        train_config: cfg.clone(),
        source_dataset: provenance.source_dataset.clone(),
        source_scorer: provenance.source_scorer.clone(),
        epoch_losses,
    })
}

/// Embeds the pool (through the cache when given) and trains.
pub fn train_retriever(
    labels: &[LabeledAnchor],
    pool: &[Example],
    embedder: &dyn Embedder,
    cfg: &TrainConfig,
    provenance: &Provenance,
    cache: Option<&std::path::Path>,
) -> Result<RetrieverCheckpoint, TrainError> {
    cfg.validate()?;
    let raw = load_or_embed(embedder, pool, cache)?;
    train_on_embeddings(labels, pool, &raw, &embedder.fingerprint(), cfg, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::HashEmbedder;
    use crate::labeling::{ScoredCandidate, ScorerKind};

    fn sc(id: &str, score: f64) -> ScoredCandidate {
        ScoredCandidate {
            candidate_id: id.into(),
            score,
            scorer_kind: ScorerKind::Probability,
        }
    }

    fn pool(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                Example::new(
                    format!("e{i:02}"),
                    format!("topic{} word{} item", i % 3, i),
                    format!("code {i}"),
                )
            })
            .collect()
    }

    fn labels(pool: &[Example]) -> Vec<LabeledAnchor> {
        pool.iter()
            .enumerate()
            .map(|(i, e)| {
                let same: Vec<&Example> = pool
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i && j % 3 == i % 3)
                    .map(|(_, x)| x)
                    .collect();
                let other: Vec<&Example> = pool
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| j % 3 != i % 3)
                    .map(|(_, x)| x)
                    .collect();
                LabeledAnchor {
                    anchor_id: e.id.clone(),
                    scorer_kind: ScorerKind::Probability,
                    stage_one_ids: same
                        .iter()
                        .take(2)
                        .chain(other.iter().take(2))
                        .map(|x| x.id.clone())
                        .collect(),
                    positives: same.iter().take(2).map(|x| sc(&x.id, 0.0)).collect(),
                    negatives: other.iter().take(2).map(|x| sc(&x.id, -1.0)).collect(),
                }
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            negatives_total: 4,
            tau_ne: 1,
            batch_size: 4,
            epochs: 3,
            d_out: 8,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_checkpoints() {
        let p = pool(12);
        let l = labels(&p);
        let e = HashEmbedder::new(32).unwrap();
        let a = train_retriever(&l, &p, &e, &small_cfg(), &Provenance::default(), None).unwrap();
        let b = train_retriever(&l, &p, &e, &small_cfg(), &Provenance::default(), None).unwrap();
        let bits = |c: &RetrieverCheckpoint| c.head.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn label_storage_order_does_not_matter() {
        let p = pool(12);
        let mut l = labels(&p);
        let e = HashEmbedder::new(32).unwrap();
        let a = train_retriever(&l, &p, &e, &small_cfg(), &Provenance::default(), None).unwrap();
        l.reverse();
        let b = train_retriever(&l, &p, &e, &small_cfg(), &Provenance::default(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_respects_sets() {
        let p = pool(12);
        let l = labels(&p);
        let cfg = TrainConfig {
            negatives_total: 6,
            tau_ne: 2,
            ..small_cfg()
        };
        let prepared = prepare(&l, &p, &cfg).unwrap();
        for prep in &prepared {
            let label = l.iter().find(|x| x.anchor_id == prep.anchor_id).unwrap();
            let draw = prep.draw(cfg.seed, 1, cfg.tau_ne);
            assert!(label.positives.iter().any(|c| c.candidate_id == draw.positive));
            assert_eq!(draw.negatives.len(), 6);
            let hard: Vec<&str> = draw.negatives[..2].to_vec();
            assert!(hard
                .iter()
                .all(|h| label.negatives.iter().any(|c| c.candidate_id == *h)));
            let distinct: BTreeSet<&&str> = draw.negatives.iter().collect();
            assert_eq!(distinct.len(), 6);
            for r in &draw.negatives[2..] {
                assert!(!label.stage_one_ids.iter().any(|s| s == r));
                assert_ne!(*r, prep.anchor_id);
            }
        }
    }

    #[test]
    fn small_random_pool_is_clamped() {
        let p = pool(12);
        let l = labels(&p);
        // 12 - 4 stage one - 1 anchor = 7 available, 63 wanted.
        let cfg = TrainConfig {
            negatives_total: 64,
            ..small_cfg()
        };
        let prepared = prepare(&l, &p, &cfg).unwrap();
        assert!(prepared.iter().all(|x| x.random_count == 7));
        let e = HashEmbedder::new(32).unwrap();
        let ck = train_retriever(&l, &p, &e, &cfg, &Provenance::default(), None).unwrap();
        assert!(ck.epoch_losses.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn config_and_label_errors() {
        let p = pool(6);
        let mut l = labels(&p);
        let e = HashEmbedder::new(16).unwrap();
        let bad = TrainConfig {
            tau_ne: 5,
            negatives_total: 4,
            ..small_cfg()
        };
        assert!(matches!(
            train_retriever(&l, &p, &e, &bad, &Provenance::default(), None),
            Err(TrainError::Config(_))
        ));
        let bad = TrainConfig {
            tau_ne: 3,
            ..small_cfg()
        };
        assert!(matches!(
            train_retriever(&l, &p, &e, &bad, &Provenance::default(), None),
            Err(TrainError::TooFewNegatives { .. })
        ));
        l[0].positives.clear();
        assert!(matches!(
            train_retriever(&l, &p, &e, &small_cfg(), &Provenance::default(), None),
            Err(TrainError::EmptyPositives(_))
        ));
        assert!(matches!(
            train_retriever(&[], &p, &e, &small_cfg(), &Provenance::default(), None),
            Err(TrainError::NoAnchors)
        ));
    }
}
