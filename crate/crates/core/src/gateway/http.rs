//! OpenAI-compatible HTTP provider.
//!
//! Scoring uses the echo pattern: the prompt and continuation are sent as one
//! prompt with `echo: true`, `max_tokens: 0`, `logprobs: 0`, and the
//! continuation's logprobs are the entries whose `text_offset` is at or past
//! the end of the prompt. Offsets are counted in Unicode scalar values.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{Embedder, GatewayError, GenerationParams, Generator, ProviderConfig, ScoreResult, Scorer};

/// Body of the echo-logprobs scoring request.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreRequest<'a> {
    pub model: &'a str,
    pub prompt: String,
    pub max_tokens: u32,
    pub echo: bool,
    pub logprobs: u32,
}

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock poisoned");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpProvider {
    cfg: ProviderConfig,
    endpoint: String,
    model: String,
    token: Option<String>,
    agent: ureq::Agent,
    permits: Permits,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("missing endpoint".into()))?
            .trim_end_matches('/')
            .to_string();
        let model = cfg
            .model_name
            .clone()
            .ok_or_else(|| GatewayError::Config("missing model_name".into()))?;
        let token = match &cfg.auth_token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| GatewayError::Config(format!("auth token environment variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits {
            free: Mutex::new(cfg.max_concurrent_requests),
            cv: Condvar::new(),
        };
        Ok(HttpProvider {
            cfg,
            endpoint,
            model,
            token,
            agent,
            permits,
        })
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.endpoint, path);
        let attempts = self.cfg.retry.max_attempts;
        let mut last = None;
        for attempt in 1..=attempts {
            let outcome = {
                let _permit = self.permits.acquire();
                let mut req = self.agent.post(&url);
                if let Some(token) = &self.token {
                    req = req.header("Authorization", format!("Bearer {token}"));
                }
                req.send_json(body).and_then(|mut resp| {
                    let status = resp.status().as_u16();
                    resp.body_mut().read_to_string().map(|text| (status, text))
                })
            };
            match outcome {
                Ok((status, text)) if (200..300).contains(&status) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| GatewayError::Malformed(format!("response is not JSON: {e}")));
                }
                Ok((status, text)) => {
                    let err = GatewayError::Status { status, body: text };
                    if status != 429 && status < 500 {
                        return Err(err);
                    }
                    tracing::warn!(%url, status, attempt, "retryable provider status");
                    last = Some(err);
                }
                Err(e) => {
                    tracing::warn!(%url, attempt, error = %e, "transport failure");
                    last = Some(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                }
            }
            if attempt < attempts {
                let backoff = self
                    .cfg
                    .retry
                    .backoff_base_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn first_choice(v: &Value) -> Result<&Value, GatewayError> {
    v.get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| GatewayError::Malformed("missing choices[0]".into()))
}

fn embedded_error(v: &Value) -> Option<String> {
    let err = v.get("error")?;
    Some(
        err.get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string()),
    )
}

/// Extracts the continuation span from an echo-logprobs completion response.
pub(crate) fn parse_score_response(v: &Value, prompt: &str, continuation: &str) -> Result<ScoreResult, GatewayError> {
    if let Some(msg) = embedded_error(v) {
        return Err(GatewayError::Refusal(msg));
    }
    let choice = first_choice(v)?;
    let logprobs = match choice.get("logprobs") {
        Some(lp) if !lp.is_null() => lp,
        _ => {
            return Err(GatewayError::Capability(
                "response carries no logprobs; echo scoring unsupported".into(),
            ))
        }
    };
    let values = logprobs
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Malformed("missing logprobs.token_logprobs".into()))?;
    let offsets = logprobs
        .get("text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Malformed("missing logprobs.text_offset".into()))?;
    if values.len() != offsets.len() {
        return Err(GatewayError::Malformed(format!(
            "token_logprobs has {} entries but text_offset has {}",
            values.len(),
            offsets.len()
        )));
    }
    let boundary = prompt.chars().count() as u64;
    let full_len = boundary + continuation.chars().count() as u64;
    if let Some(text) = choice.get("text").and_then(Value::as_str) {
        let echoed = text.chars().count() as u64;
        if echoed < full_len {
            return Err(GatewayError::Truncated(format!(
                "echoed {echoed} of {full_len} characters"
            )));
        }
    }
    let mut span = Vec::new();
    for (lp, off) in values.iter().zip(offsets) {
        let off = off
            .as_u64()
            .ok_or_else(|| GatewayError::Malformed("text_offset entries must be non-negative integers".into()))?;
        if off < boundary {
            continue;
        }
        if off >= full_len {
            break;
        }
        let lp = lp
            .as_f64()
            .ok_or_else(|| GatewayError::Malformed(format!("null logprob at offset {off}")))?;
        if lp > 1e-6 || lp.is_nan() {
            return Err(GatewayError::Malformed(format!(
                "logprob {lp} is not a log-probability"
            )));
        }
        span.push(lp.min(0.0));
    }
    if span.is_empty() {
        return Err(GatewayError::Truncated(
            "no tokens found in the continuation span".into(),
        ));
    }
    Ok(ScoreResult::new(span))
}

pub(crate) fn parse_generation_response(v: &Value, n: usize) -> Result<Vec<String>, GatewayError> {
    if let Some(msg) = embedded_error(v) {
        return Err(GatewayError::Refusal(msg));
    }
    let choices = v
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Malformed("missing choices".into()))?;
    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, c) in choices.iter().enumerate() {
        if c.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
            return Err(GatewayError::Refusal("completion withheld by content filter".into()));
        }
        let text = c
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Malformed(format!("choices[{pos}].text missing")))?;
        let index = c.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        indexed.push((index, text.to_string()));
    }
    if indexed.len() != n {
        return Err(GatewayError::Malformed(format!(
            "requested {n} completions, received {}",
            indexed.len()
        )));
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, t)| t).collect())
}

pub(crate) fn parse_embedding_response(v: &Value, expected_dim: Option<usize>) -> Result<Vec<f64>, GatewayError> {
    if let Some(msg) = embedded_error(v) {
        return Err(GatewayError::Refusal(msg));
    }
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .and_then(|d| d.first())
        .ok_or_else(|| GatewayError::Malformed("missing data[0]".into()))?;
    let vector = data
        .get("embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Malformed("missing data[0].embedding".into()))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| GatewayError::Malformed("non-numeric embedding entry".into()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if let Some(d) = expected_dim {
        if vector.len() != d {
            return Err(GatewayError::Malformed(format!(
                "embedding has dimension {}, expected {d}",
                vector.len()
            )));
        }
    }
    Ok(vector)
}

impl Scorer for HttpProvider {
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, GatewayError> {
        if continuation.is_empty() {
            return Err(GatewayError::EmptyContinuation);
        }
        let body = ScoreRequest {
            model: &self.model,
            prompt: format!("{prompt}{continuation}"),
            max_tokens: 0,
            echo: true,
            logprobs: 0,
        };
        let v = self.post("completions", &body)?;
        parse_score_response(&v, prompt, continuation)
    }

    fn max_concurrency(&self) -> usize {
        self.cfg.max_concurrent_requests
    }

    fn describe(&self) -> String {
        format!("http:{}", self.model)
    }
}

impl Generator for HttpProvider {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, GatewayError> {
        params.validate()?;
        let body = GenerateRequest {
            model: &self.model,
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            top_p: params.top_p,
            n: params.n_samples,
            seed: params.seed,
        };
        let v = self.post("completions", &body)?;
        parse_generation_response(&v, params.n_samples)
    }

    fn max_concurrency(&self) -> usize {
        self.cfg.max_concurrent_requests
    }

    fn describe(&self) -> String {
        format!("http:{}", self.model)
    }
}

impl Embedder for HttpProvider {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let v = self.post(
            "embeddings",
            &EmbedRequest {
                model: &self.model,
                input: text,
            },
        )?;
        parse_embedding_response(&v, self.cfg.dimension)
    }

    fn dimension(&self) -> usize {
        self.cfg.dimension.unwrap_or(0)
    }

    fn fingerprint(&self) -> String {
        match self.cfg.dimension {
            Some(d) => format!("http:{}:{d}", self.model),
            None => format!("http:{}:?", self.model),
        }
    }

    fn max_concurrency(&self) -> usize {
        self.cfg.max_concurrent_requests
    }
}
