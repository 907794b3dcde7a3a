//! Uniform access to the three LLM capabilities the pipeline needs:
//! continuation scoring, sampling, and embedding.
//!
//! [`HttpProvider`] speaks the OpenAI-compatible completions/embeddings
//! protocol. [`MockScorer`], [`MockGenerator`] and [`HashEmbedder`] are pure
//! functions of their inputs, for offline runs and tests.

mod embed;
mod http;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;

pub use embed::{fnv1a_64, HashEmbedder, DEFAULT_HASH_DIM};
pub use http::{HttpProvider, ScoreRequest};
pub use mock::{MockGenerator, MockPool, MockScorer, MOCK_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    /// Natural-log probability of each continuation token.
    pub token_logprobs: Vec<f64>,
    pub token_count: usize,
}

impl ScoreResult {
    pub fn new(token_logprobs: Vec<f64>) -> Self {
        let token_count = token_logprobs.len();
        ScoreResult {
            token_logprobs,
            token_count,
        }
    }

    pub fn sum(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    /// Sum of log-probabilities divided by the token count.
    pub fn mean(&self) -> f64 {
        self.sum() / self.token_count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.8,
            top_p: 0.95,
            max_tokens: 500,
            n_samples: 5,
            seed: None,
        }
    }
}

impl GenerationParams {
    /// Single greedy sample, as used for match-BLEU labeling.
    pub fn greedy(max_tokens: usize) -> Self {
        GenerationParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens,
            n_samples: 1,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidParams(m.to_string()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider lacks capability: {0}")]
    Capability(String),
    #[error("continuation truncated by provider: {0}")]
    Truncated(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("continuation must be non-empty")]
    EmptyContinuation,
    #[error("provider configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// True when retrying later could succeed (the provider or network failed).
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { .. } | GatewayError::Status { .. } | GatewayError::Refusal(_)
        )
    }
}

pub trait Scorer: Send + Sync {
    /// Per-token log-probabilities of `continuation` given `prompt`.
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, GatewayError>;

    fn max_concurrency(&self) -> usize {
        1
    }

    /// Short provenance string (kind and model).
    fn describe(&self) -> String;
}

pub trait Generator: Send + Sync {
    /// Exactly `params.n_samples` completions, in provider order.
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, GatewayError>;

    fn max_concurrency(&self) -> usize {
        1
    }

    fn describe(&self) -> String;
}

pub trait Embedder: Send + Sync {
    /// Fixed-dimension vector. An all-zero result means the text could not
    /// be embedded and must not be normalized.
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;

    fn dimension(&self) -> usize;

    /// Provider kind + model + dimension; checkpoints record it.
    fn fingerprint(&self) -> String;

    fn max_concurrency(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    MockScorer,
    MockGenerator,
    HashEmbedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_requests: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Embedding dimension (hash_embedder; optional check for http).
    #[serde(default)]
    pub dimension: Option<usize>,
    /// Where mock_generator looks for programs to copy.
    #[serde(default)]
    pub mock_pool: MockPool,
    /// Probability floor of mock_scorer.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl ProviderConfig {
    pub fn of_kind(kind: ProviderKind) -> Self {
        ProviderConfig {
            kind,
            endpoint: None,
            model_name: None,
            auth_token_env: None,
            timeout_secs: default_timeout_secs(),
            max_concurrent_requests: default_concurrency(),
            retry: RetryPolicy::default(),
            dimension: None,
            mock_pool: MockPool::default(),
            epsilon: None,
        }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint: Some(endpoint.into()),
            model_name: Some(model.into()),
            ..Self::of_kind(ProviderKind::Http)
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.kind == ProviderKind::Http && (self.endpoint.is_none() || self.model_name.is_none()) {
            return Err(GatewayError::Config(
                "http provider requires endpoint and model_name".into(),
            ));
        }
        if self.max_concurrent_requests == 0 {
            return Err(GatewayError::Config("max_concurrent_requests must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be positive".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    fn wrong_kind(&self, role: &str) -> GatewayError {
        GatewayError::Config(format!("provider kind {:?} cannot act as {role}", self.kind))
    }

    pub fn build_scorer(&self) -> Result<Arc<dyn Scorer>, GatewayError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Http => Ok(Arc::new(HttpProvider::new(self.clone())?)),
            ProviderKind::MockScorer => Ok(Arc::new(MockScorer::new(self.epsilon.unwrap_or(MOCK_EPSILON)))),
            _ => Err(self.wrong_kind("scorer")),
        }
    }

    /// `pool` backs a mock generator configured with [`MockPool::Train`].
    pub fn build_generator(&self, pool: &[Example]) -> Result<Arc<dyn Generator>, GatewayError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Http => Ok(Arc::new(HttpProvider::new(self.clone())?)),
            ProviderKind::MockGenerator => Ok(Arc::new(match self.mock_pool {
                MockPool::PromptShots => MockGenerator::from_prompt_shots(),
                MockPool::Train => MockGenerator::with_pool(pool.to_vec()),
            })),
            _ => Err(self.wrong_kind("generator")),
        }
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>, GatewayError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Http => Ok(Arc::new(HttpProvider::new(self.clone())?)),
            ProviderKind::HashEmbedder => Ok(Arc::new(HashEmbedder::new(self.dimension.unwrap_or(DEFAULT_HASH_DIM))?)),
            _ => Err(self.wrong_kind("embedder")),
        }
    }
}

/// Runs `f` over `items` with at most `limit` calls in flight and returns
/// results in input order, whatever order they complete in.
pub fn map_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let limit = limit.max(1).min(items.len().max(1));
    if limit == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Embeds every text, preserving order.
pub fn embed_all(embedder: &dyn Embedder, texts: &[&str]) -> Result<Vec<Vec<f64>>, GatewayError> {
    map_bounded(texts, embedder.max_concurrency(), |t| embedder.embed(t))
        .into_iter()
        .collect()
}
