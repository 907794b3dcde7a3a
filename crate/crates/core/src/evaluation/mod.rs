//! Generating programs with selected prompts and scoring them with Pass@k.

mod passk;
mod report;
mod verdict;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::gateway::{map_bounded, GatewayError, GenerationParams, Generator};
use crate::jsonl::{self, JsonlError};
use crate::selection::{assemble_prompt, SelectionError, Shot, ShotOrder};

pub use passk::{pass_at_k, VerdictMatrix};
pub use report::{compare_report, test_digest, Comparison, ComparisonRow, EvalReport};
pub use verdict::{obtain_verdicts, read_verdicts, Verdict, VerdictProvider, DEFAULT_TIMEOUT_SECS};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {len} samples of `{test_id}`")]
    KTooLarge { k: usize, len: usize, test_id: String },
    #[error("verdict matrix is empty")]
    EmptyMatrix,
    #[error("no verdict for `{test_id}` sample {sample_index}")]
    MissingVerdict { test_id: String, sample_index: usize },
    #[error("duplicate record for `{test_id}` sample {sample_index}")]
    Duplicate { test_id: String, sample_index: usize },
    #[error("test `{0}` has no test statements to execute")]
    NoTests(String),
    #[error("unknown test id `{0}`")]
    UnknownTest(String),
    #[error("runner command not found: {0}")]
    RunnerNotFound(String),
    #[error("runner command is empty")]
    EmptyCommand,
    #[error("executing generated programs requires explicit consent")]
    ConsentRequired,
    #[error("at least one report is required")]
    NoReports,
    #[error("shot lists ({shots}) do not line up with tests ({tests})")]
    Misaligned { shots: usize, tests: usize },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub test_id: String,
    pub strategy: String,
    pub sample_index: usize,
    pub program: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFailure {
    pub test_id: String,
    pub message: String,
    pub provider_failure: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutcome {
    /// Records in test order, sample index ascending.
    pub records: Vec<SampleRecord>,
    pub failures: Vec<GenerationFailure>,
    /// Tests whose samples were already on disk.
    pub resumed: usize,
}

/// Generates `params.n_samples` programs for every test using its shots.
///
/// `shots[i]` belongs to `tests[i]`. With `out`, completed tests already in
/// the file are skipped, new ones are appended as they finish, and the file
/// is finally rewritten in test order. A test whose generation fails is
/// reported in `failures` and has no records.
#[allow(clippy::too_many_arguments)]
pub fn run_generation(
    tests: &[Example],
    shots: &[Vec<Shot>],
    strategy: &str,
    pool: &[Example],
    order: ShotOrder,
    generator: &dyn Generator,
    params: &GenerationParams,
    out: Option<&Path>,
) -> Result<GenerationOutcome, EvalError> {
    params.validate()?;
    if shots.len() != tests.len() {
        return Err(EvalError::Misaligned {
            shots: shots.len(),
            tests: tests.len(),
        });
    }
    let by_id = crate::selection::pool_map(pool);
    let n = params.n_samples;

    let mut done: HashMap<String, Vec<SampleRecord>> = HashMap::new();
    if let Some(path) = out {
        let mut partial: HashMap<String, Vec<SampleRecord>> = HashMap::new();
        for r in jsonl::read_jsonl_resumable::<SampleRecord>(path)? {
            if r.strategy == strategy && r.sample_index < n {
                partial.entry(r.test_id.clone()).or_default().push(r);
            }
        }
        for (id, mut rs) in partial {
            rs.sort_by_key(|r| r.sample_index);
            rs.dedup_by_key(|r| r.sample_index);
            if rs.len() == n {
                done.insert(id, rs);
            }
        }
    }
    let mut outcome = GenerationOutcome {
        resumed: tests.iter().filter(|t| done.contains_key(&t.id)).count(),
        ..Default::default()
    };

    let pending: Vec<(&Example, &Vec<Shot>)> = tests
        .iter()
        .zip(shots)
        .filter(|(t, _)| !done.contains_key(&t.id))
        .collect();
    let width = generator.max_concurrency().max(1);
    for chunk in pending.chunks(width * 4) {
        let results = map_bounded(chunk, width, |(test, shots)| -> Result<Vec<String>, EvalError> {
            let prompt = assemble_prompt(shots, &by_id, &test.requirement, order)?;
            let programs = generator.generate(&prompt.rendered, params)?;
            if programs.len() != n {
                return Err(
                    GatewayError::Malformed(format!("expected {n} completions, got {}", programs.len())).into(),
                );
            }
            Ok(programs)
        });
        let mut fresh = Vec::new();
        for ((test, _), result) in chunk.iter().zip(results) {
            match result {
                Ok(programs) => {
                    let records: Vec<SampleRecord> = programs
                        .into_iter()
                        .enumerate()
                        .map(|(i, program)| SampleRecord {
                            test_id: test.id.clone(),
                            strategy: strategy.to_string(),
                            sample_index: i,
                            program,
                        })
                        .collect();
                    fresh.extend(records.iter().cloned());
                    done.insert(test.id.clone(), records);
                }
                Err(EvalError::Selection(e)) => return Err(EvalError::Selection(e)),
                Err(e) => {
                    let provider_failure = matches!(&e, EvalError::Gateway(g) if g.is_provider_failure());
                    tracing::warn!(test = %test.id, "generation failed: {e}");
                    outcome.failures.push(GenerationFailure {
                        test_id: test.id.clone(),
                        message: e.to_string(),
                        provider_failure,
                    });
                }
            }
        }
        if let Some(path) = out {
            jsonl::append_jsonl(path, &fresh)?;
        }
    }

    outcome.records = tests.iter().filter_map(|t| done.remove(&t.id)).flatten().collect();
    if let Some(path) = out {
        jsonl::write_jsonl(path, &outcome.records)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockGenerator;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn pool() -> Vec<Example> {
        (0..6)
            .map(|i| Example::new(format!("p{i}"), format!("requirement {i}"), format!("code_{i}")))
            .collect()
    }

    fn tests_and_shots() -> (Vec<Example>, Vec<Vec<Shot>>) {
        let tests: Vec<Example> = (0..4)
            .map(|i| Example::new(format!("t{i}"), format!("requirement {i}"), format!("code_{i}")))
            .collect();
        let shots = (0..4)
            .map(|i| {
                vec![
                    Shot {
                        id: format!("p{i}"),
                        similarity: 1.0,
                    },
                    Shot {
                        id: "p5".into(),
                        similarity: 0.1,
                    },
                ]
            })
            .collect();
        (tests, shots)
    }

    #[test]
    fn counts_records() {
        let p = pool();
        let (tests, shots) = tests_and_shots();
        let g = MockGenerator::from_prompt_shots();
        let out = run_generation(
            &tests,
            &shots,
            "s",
            &p,
            ShotOrder::Asc,
            &g,
            &GenerationParams::default(),
            None,
        )
        .unwrap();
        assert_eq!(out.records.len(), 20);
        assert!(out.failures.is_empty());
        for r in &out.records {
            assert!(r.sample_index < 5);
        }
    }

    #[test]
    fn verbatim_pool_reproduces_ground_truth() {
        let p = pool();
        let (tests, shots) = tests_and_shots();
        let g = MockGenerator::with_pool(p.clone());
        let out = run_generation(
            &tests,
            &shots,
            "s",
            &p,
            ShotOrder::Asc,
            &g,
            &GenerationParams::default(),
            None,
        )
        .unwrap();
        for r in &out.records {
            let t = tests.iter().find(|t| t.id == r.test_id).unwrap();
            assert_eq!(r.program, t.code);
        }
    }

    struct Flaky {
        inner: MockGenerator,
        calls: AtomicUsize,
        fail_from: usize,
    }

    impl Generator for Flaky {
        fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, GatewayError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_from {
                return Err(GatewayError::Transport {
                    attempts: 3,
                    message: "down".into(),
                });
            }
            self.inner.generate(prompt, params)
        }
        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn interrupted_run_resumes_to_identical_file() {
        let p = pool();
        let (tests, shots) = tests_and_shots();
        let params = GenerationParams::default();
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean.jsonl");
        let g = MockGenerator::from_prompt_shots();
        run_generation(&tests, &shots, "s", &p, ShotOrder::Asc, &g, &params, Some(&clean)).unwrap();

        let resumed = dir.path().join("resumed.jsonl");
        let flaky = Flaky {
            inner: MockGenerator::from_prompt_shots(),
            calls: AtomicUsize::new(0),
            fail_from: 2,
        };
        let first = run_generation(&tests, &shots, "s", &p, ShotOrder::Asc, &flaky, &params, Some(&resumed)).unwrap();
        assert_eq!(first.failures.len(), 2);
        assert!(first.failures.iter().all(|f| f.provider_failure));
        // Simulate a crash mid-write.
        let mut text = std::fs::read_to_string(&resumed).unwrap();
        text.push_str("{\"test_id\":\"t2\",\"stra");
        std::fs::write(&resumed, text).unwrap();

        let second = run_generation(&tests, &shots, "s", &p, ShotOrder::Asc, &g, &params, Some(&resumed)).unwrap();
        assert_eq!(second.resumed, 2);
        assert_eq!(second.records.len(), 20);
        assert_eq!(std::fs::read(&clean).unwrap(), std::fs::read(&resumed).unwrap());
    }

    #[test]
    fn misaligned_shots_rejected() {
        let p = pool();
        let (tests, shots) = tests_and_shots();
        let g = MockGenerator::from_prompt_shots();
        let r = run_generation(
            &tests,
            &shots[..2],
            "s",
            &p,
            ShotOrder::Asc,
            &g,
            &GenerationParams::default(),
            None,
        );
        assert!(matches!(r, Err(EvalError::Misaligned { .. })));
    }
}
