//! Okapi BM25 over tokenized requirements.
//!
//! Used for stage-one candidate filtering during labeling and as the
//! lexical baseline selector.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// |A ∩ B| / |A ∪ B| over token sets. Two empty sets have similarity 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LexicalError {
    #[error("unknown document id `{0}`")]
    UnknownDoc(String),
    #[error("invalid BM25 parameters k1={k1}, b={b} (need k1 > 0 and 0 <= b <= 1)")]
    InvalidParams { k1: f64, b: f64 },
    #[error("top-t requires t >= 1")]
    ZeroT,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    position: HashMap<String, usize>,
    doc_token_counts: Vec<HashMap<String, u32>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    doc_frequency: HashMap<String, u32>,
    params: Bm25Params,
}

/// A ranked retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

impl Bm25Index {
    /// Builds an index over `(id, text)` documents. Text is tokenized with [`tokenize`].
    pub fn build<'a, I>(docs: I, params: Bm25Params) -> Result<Self, LexicalError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        if !(params.k1 > 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(LexicalError::InvalidParams {
                k1: params.k1,
                b: params.b,
            });
        }
        let mut index = Bm25Index {
            doc_ids: Vec::new(),
            position: HashMap::new(),
            doc_token_counts: Vec::new(),
            doc_lengths: Vec::new(),
            avg_doc_length: 0.0,
            doc_frequency: HashMap::new(),
            params,
        };
        for (id, text) in docs {
            let tokens = tokenize(text);
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for t in counts.keys() {
                *index.doc_frequency.entry(t.clone()).or_default() += 1;
            }
            index.position.insert(id.to_string(), index.doc_ids.len());
            index.doc_ids.push(id.to_string());
            index.doc_lengths.push(tokens.len());
            index.doc_token_counts.push(counts);
        }
        let n = index.doc_ids.len();
        if n > 0 {
            index.avg_doc_length = index.doc_lengths.iter().sum::<usize>() as f64 / n as f64;
        }
        Ok(index)
    }

    /// Indexes the requirements of `examples`.
    pub fn over_requirements(examples: &[crate::corpus::Example], params: Bm25Params) -> Result<Self, LexicalError> {
        Self::build(examples.iter().map(|e| (e.id.as_str(), e.requirement.as_str())), params)
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_frequency(&self, token: &str) -> u32 {
        self.doc_frequency.get(token).copied().unwrap_or(0)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    fn idf(&self, token: &str) -> f64 {
        let d = self.doc_ids.len() as f64;
        let df = self.doc_frequency(token) as f64;
        (1.0 + (d - df + 0.5) / (df + 0.5)).ln()
    }

    fn score_at(&self, pos: usize, query_tokens: &[String]) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let counts = &self.doc_token_counts[pos];
        let len = self.doc_lengths[pos] as f64;
        let norm = if self.avg_doc_length > 0.0 {
            len / self.avg_doc_length
        } else {
            0.0
        };
        query_tokens
            .iter()
            .map(|t| {
                let tf = counts.get(t).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(t) * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * norm))
            })
            .sum()
    }

    /// BM25 score of one document. Repeated query tokens contribute once per repeat.
    pub fn score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64, LexicalError> {
        let pos = *self
            .position
            .get(doc_id)
            .ok_or_else(|| LexicalError::UnknownDoc(doc_id.to_string()))?;
        Ok(self.score_at(pos, query_tokens))
    }

    /// The `t` best documents not in `exclude`, score descending, ties by id ascending.
    pub fn top_t(&self, query_tokens: &[String], t: usize, exclude: &BTreeSet<&str>) -> Result<Vec<Hit>, LexicalError> {
        if t == 0 {
            return Err(LexicalError::ZeroT);
        }
        let mut hits: Vec<Hit> = self
            .doc_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| !exclude.contains(id.as_str()))
            .map(|(pos, id)| Hit {
                id: id.clone(),
                score: self.score_at(pos, query_tokens),
            })
            .collect();
        hits.sort_by(|a, b| rank_order(a.score, &a.id, b.score, &b.id));
        hits.truncate(t);
        Ok(hits)
    }
}
