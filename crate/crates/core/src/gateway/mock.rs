use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationParams, Generator, ScoreResult, Scorer};
use crate::corpus::Example;
use crate::lexical::{jaccard, token_set};
use crate::selection::prompt;

pub const MOCK_EPSILON: f64 = 0.01;

/// Scores a continuation by how much its tokens overlap the code of the
/// in-context shots.
///
/// The continuation is one pseudo-token with log-probability
/// `ln(eps + (1 - eps) * J)`, where `J` is the token-set Jaccard similarity
/// between the continuation and a shot's code (the best shot when there are
/// several, 0 when there are none). Requirements are ignored.
#[derive(Debug, Clone)]
pub struct MockScorer {
    epsilon: f64,
}

impl MockScorer {
    pub fn new(epsilon: f64) -> Self {
        MockScorer { epsilon }
    }

    pub fn logprob_for(&self, jaccard: f64) -> f64 {
        (self.epsilon + (1.0 - self.epsilon) * jaccard).ln()
    }
}

impl Default for MockScorer {
    fn default() -> Self {
        MockScorer::new(MOCK_EPSILON)
    }
}

impl Scorer for MockScorer {
    fn score_continuation(&self, prompt_text: &str, continuation: &str) -> Result<ScoreResult, GatewayError> {
        if continuation.is_empty() {
            return Err(GatewayError::EmptyContinuation);
        }
        let (shots, _) = prompt::parse(prompt_text)
            .ok_or_else(|| GatewayError::Malformed("mock_scorer needs a templated prompt".into()))?;
        let target = token_set(continuation);
        let j = shots
            .iter()
            .map(|s| jaccard(&token_set(&s.code), &target))
            .fold(0.0, f64::max);
        Ok(ScoreResult::new(vec![self.logprob_for(j)]))
    }

    fn max_concurrency(&self) -> usize {
        8
    }

    fn describe(&self) -> String {
        format!("mock_scorer:eps={}", self.epsilon)
    }
}

/// Which examples the mock generator copies programs from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPool {
    /// The shots rendered in the prompt itself, so output depends on selection.
    #[default]
    PromptShots,
    /// A fixed pool (the dataset's train split) regardless of the prompt.
    Train,
}

/// Returns, for every sample, the code of the candidate whose requirement has
/// the highest token Jaccard with the prompt's final requirement.
///
/// Ties go to the lowest id for a fixed pool and to the earliest shot for
/// prompt shots. No candidates means empty completions. Every completion is
/// one pseudo-token, so `max_tokens` never truncates.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    source: MockPool,
    pool: Vec<(BTreeSet<String>, String, String)>,
}

impl MockGenerator {
    pub fn from_prompt_shots() -> Self {
        MockGenerator {
            source: MockPool::PromptShots,
            pool: Vec::new(),
        }
    }

    pub fn with_pool(mut examples: Vec<Example>) -> Self {
        examples.sort_by(|a, b| a.id.cmp(&b.id));
        MockGenerator {
            source: MockPool::Train,
            pool: examples
                .into_iter()
                .map(|e| (token_set(&e.requirement), e.id, e.code))
                .collect(),
        }
    }

    fn best<'a, I>(candidates: I, query: &BTreeSet<String>) -> Option<String>
    where
        I: IntoIterator<Item = (BTreeSet<String>, &'a str)>,
    {
        let mut best: Option<(f64, &str)> = None;
        for (req, code) in candidates {
            let j = jaccard(&req, query);
            if best.is_none_or(|(bj, _)| j > bj) {
                best = Some((j, code));
            }
        }
        best.map(|(_, code)| code.to_string())
    }
}

impl Generator for MockGenerator {
    fn generate(&self, prompt_text: &str, params: &GenerationParams) -> Result<Vec<String>, GatewayError> {
        params.validate()?;
        let (shots, test_requirement) = prompt::parse(prompt_text)
            .ok_or_else(|| GatewayError::Malformed("mock_generator needs a templated prompt".into()))?;
        let query = token_set(&test_requirement);
        let program = match self.source {
            MockPool::PromptShots => Self::best(
                shots.iter().map(|s| (token_set(&s.requirement), s.code.as_str())),
                &query,
            ),
            MockPool::Train => Self::best(
                self.pool.iter().map(|(req, _, code)| (req.clone(), code.as_str())),
                &query,
            ),
        };
        Ok(vec![program.unwrap_or_default(); params.n_samples])
    }

    fn max_concurrency(&self) -> usize {
        8
    }

    fn describe(&self) -> String {
        match self.source {
            MockPool::PromptShots => "mock_generator:prompt_shots".into(),
            MockPool::Train => format!("mock_generator:train({})", self.pool.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::prompt::{render, ShotText};

    fn one_shot(code: &str, test_req: &str) -> String {
        render(
            &[ShotText {
                requirement: "anything".into(),
                code: code.into(),
            }],
            test_req,
        )
    }

    #[test]
    fn identical_code_scores_zero() {
        let s = MockScorer::default();
        let r = s
            .score_continuation(&one_shot("return a + b", "x"), "return a + b")
            .unwrap();
        assert_eq!(r.token_count, 1);
        assert_eq!(r.token_logprobs, vec![0.0]);
    }

    #[test]
    fn disjoint_code_scores_epsilon_floor() {
        let r = MockScorer::default()
            .score_continuation(&one_shot("foo bar", "x"), "baz qux")
            .unwrap();
        assert!((r.token_logprobs[0] - (-4.605170185988091)).abs() < 1e-12);
        assert!(r.token_logprobs[0] <= 0.0);
    }

    #[test]
    fn requirements_do_not_affect_score() {
        let s = MockScorer::default();
        let a = s.score_continuation(&one_shot("a b", "one"), "a c").unwrap();
        let b = s.score_continuation(&one_shot("a b", "two"), "a c").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_continuation_rejected() {
        assert!(matches!(
            MockScorer::default().score_continuation(&one_shot("a", "b"), ""),
            Err(GatewayError::EmptyContinuation)
        ));
    }

    #[test]
    fn fixed_pool_copies_exact_requirement_match() {
        let pool = vec![
            Example::new("b", "reverse a list", "def rev(x): return x[::-1]"),
            Example::new("a", "sum a list", "def s(x): return sum(x)"),
        ];
        let g = MockGenerator::with_pool(pool);
        let out = g
            .generate(&render(&[], "reverse a list"), &GenerationParams::default())
            .unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|p| p == "def rev(x): return x[::-1]"));
    }

    #[test]
    fn fixed_pool_ties_go_to_lowest_id() {
        let pool = vec![Example::new("b", "same", "B"), Example::new("a", "same", "A")];
        let out = MockGenerator::with_pool(pool)
            .generate(&render(&[], "unrelated"), &GenerationParams::default())
            .unwrap();
        assert_eq!(out[0], "A");
    }

    #[test]
    fn empty_pool_yields_empty_strings() {
        let out = MockGenerator::with_pool(vec![])
            .generate(&render(&[], "x"), &GenerationParams::default())
            .unwrap();
        assert_eq!(out, vec![String::new(); 5]);
        let out = MockGenerator::from_prompt_shots()
            .generate(&render(&[], "x"), &GenerationParams::default())
            .unwrap();
        assert_eq!(out, vec![String::new(); 5]);
    }

    #[test]
    fn prompt_shots_pick_most_similar_requirement() {
        let shots = vec![
            ShotText {
                requirement: "sum numbers".into(),
                code: "S".into(),
            },
            ShotText {
                requirement: "reverse words in text".into(),
                code: "R".into(),
            },
        ];
        let out = MockGenerator::from_prompt_shots()
            .generate(
                &render(&shots, "reverse the words"),
                &GenerationParams {
                    n_samples: 2,
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(out, vec!["R".to_string(), "R".to_string()]);
    }
}
