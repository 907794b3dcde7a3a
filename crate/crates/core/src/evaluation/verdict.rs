use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalError, SampleRecord, VerdictMatrix};
use crate::corpus::Example;
use crate::gateway::map_bounded;
use crate::jsonl;

pub const DEFAULT_TIMEOUT_SECS: u64 = 10;

/// One line of a verdict file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub test_id: String,
    pub sample_index: usize,
    pub pass: bool,
    #[serde(default)]
    pub reason: String,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_processes() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictProvider {
    ExternalFile {
        path: PathBuf,
    },
    /// Runs `command... <file>` where the file holds the program followed by
    /// the test statements. Exit status 0 passes.
    SubprocessRunner {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_processes")]
        max_processes: usize,
        #[serde(default = "default_extension")]
        file_extension: String,
    },
}

fn default_extension() -> String {
    "py".into()
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, EvalError> {
    Ok(jsonl::read_jsonl(path)?)
}

/// Verdicts for every record, gathered into a matrix keyed by test id.
///
/// The subprocess runner executes generated code and refuses to run unless
/// `allow_execution` is set.
pub fn obtain_verdicts(
    records: &[SampleRecord],
    tests: &[Example],
    provider: &VerdictProvider,
    allow_execution: bool,
) -> Result<(VerdictMatrix, Vec<Verdict>), EvalError> {
    let verdicts = match provider {
        VerdictProvider::ExternalFile { path } => {
            let mut by_key: HashMap<(String, usize), Verdict> = HashMap::new();
            for v in read_verdicts(path)? {
                by_key.insert((v.test_id.clone(), v.sample_index), v);
            }
            records
                .iter()
                .map(|r| {
                    by_key
                        .remove(&(r.test_id.clone(), r.sample_index))
                        .ok_or_else(|| EvalError::MissingVerdict {
                            test_id: r.test_id.clone(),
                            sample_index: r.sample_index,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        VerdictProvider::SubprocessRunner {
            command,
            timeout_secs,
            max_processes,
            file_extension,
        } => {
            if !allow_execution {
                return Err(EvalError::ConsentRequired);
            }
            let program = command.first().ok_or(EvalError::EmptyCommand)?;
            let by_id: HashMap<&str, &Example> = tests.iter().map(|t| (t.id.as_str(), t)).collect();
            for r in records {
                let t = by_id
                    .get(r.test_id.as_str())
                    .ok_or_else(|| EvalError::UnknownTest(r.test_id.clone()))?;
                if t.tests.is_empty() {
                    return Err(EvalError::NoTests(t.id.clone()));
                }
            }
            let timeout = Duration::from_secs(*timeout_secs);
            let results = map_bounded(records, *max_processes, |r| {
                let source = format!("{}\n\n{}\n", r.program, by_id[r.test_id.as_str()].tests.join("\n"));
                run_one(program, &command[1..], file_extension, &source, timeout).map(|(pass, reason)| Verdict {
                    test_id: r.test_id.clone(),
                    sample_index: r.sample_index,
                    pass,
                    reason,
                })
            });
            results.into_iter().collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok((matrix_from(records, &verdicts)?, verdicts))
}

fn matrix_from(records: &[SampleRecord], verdicts: &[Verdict]) -> Result<VerdictMatrix, EvalError> {
    let mut slots: BTreeMap<String, BTreeMap<usize, bool>> = BTreeMap::new();
    for (r, v) in records.iter().zip(verdicts) {
        if slots
            .entry(r.test_id.clone())
            .or_default()
            .insert(r.sample_index, v.pass)
            .is_some()
        {
            return Err(EvalError::Duplicate {
                test_id: r.test_id.clone(),
                sample_index: r.sample_index,
            });
        }
    }
    let mut rows = BTreeMap::new();
    for (id, samples) in slots {
        let mut row = Vec::with_capacity(samples.len());
        for (expected, (index, pass)) in samples.into_iter().enumerate() {
            if index != expected {
                return Err(EvalError::MissingVerdict {
                    test_id: id,
                    sample_index: expected,
                });
            }
            row.push(pass);
        }
        rows.insert(id, row);
    }
    Ok(VerdictMatrix { rows })
}

fn run_one(
    program: &str,
    args: &[String],
    extension: &str,
    source: &str,
    timeout: Duration,
) -> Result<(bool, String), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("runner temp file: {e}"));
    let mut file = tempfile::Builder::new()
        .prefix("lail-run-")
        .suffix(&format!(".{extension}"))
        .tempfile()
        .map_err(io)?;
    file.write_all(source.as_bytes()).map_err(io)?;
    file.flush().map_err(io)?;

    let mut child = match Command::new(program)
        .args(args)
        .arg(file.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(EvalError::RunnerNotFound(program.to_string()))
        }
        Err(e) => return Err(EvalError::Io(format!("spawning {program}: {e}"))),
    };
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) if status.success() => return Ok((true, "passed".into())),
            Ok(Some(_)) => return Ok((false, "nonzero exit".into())),
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok((false, "timeout".into()));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(EvalError::Io(format!("waiting for {program}: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, i: usize, program: &str) -> SampleRecord {
        SampleRecord {
            test_id: id.into(),
            strategy: "s".into(),
            sample_index: i,
            program: program.into(),
        }
    }

    fn sh(timeout_secs: u64) -> VerdictProvider {
        VerdictProvider::SubprocessRunner {
            command: vec!["sh".into()],
            timeout_secs,
            max_processes: 2,
            file_extension: "sh".into(),
        }
    }

    #[test]
    fn external_file_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let records: Vec<SampleRecord> = (0..3).map(|i| record("a", i, "x")).collect();
        let lines: Vec<Verdict> = (0..3)
            .map(|i| Verdict {
                test_id: "a".into(),
                sample_index: i,
                pass: true,
                reason: String::new(),
            })
            .collect();
        jsonl::write_jsonl(&path, &lines).unwrap();
        let (m, _) = obtain_verdicts(
            &records,
            &[],
            &VerdictProvider::ExternalFile { path: path.clone() },
            false,
        )
        .unwrap();
        assert_eq!(m.rows["a"], vec![true; 3]);

        jsonl::write_jsonl(&path, &lines[..2]).unwrap();
        assert!(matches!(
            obtain_verdicts(&records, &[], &VerdictProvider::ExternalFile { path }, false),
            Err(EvalError::MissingVerdict { sample_index: 2, .. })
        ));
    }

    #[test]
    fn runner_requires_consent() {
        let t = Example::new("a", "r", "c").with_tests(vec!["true".into()]);
        assert!(matches!(
            obtain_verdicts(&[record("a", 0, "true")], &[t], &sh(10), false),
            Err(EvalError::ConsentRequired)
        ));
    }

    #[test]
    fn runner_pass_fail_and_missing_tests() {
        let t = Example::new("a", "r", "c").with_tests(vec!["test \"$X\" = 1 || exit 3".into()]);
        let records = vec![record("a", 0, "X=1"), record("a", 1, "X=2")];
        let (m, v) = obtain_verdicts(&records, &[t], &sh(10), true).unwrap();
        assert_eq!(m.rows["a"], vec![true, false]);
        assert_eq!(v[1].reason, "nonzero exit");

        let bare = Example::new("a", "r", "c");
        assert!(matches!(
            obtain_verdicts(&records, &[bare], &sh(10), true),
            Err(EvalError::NoTests(_))
        ));
    }

    #[test]
    fn infinite_loop_times_out() {
        let t = Example::new("a", "r", "c").with_tests(vec!["exit 0".into()]);
        let start = Instant::now();
        let (m, v) = obtain_verdicts(&[record("a", 0, "while :; do :; done")], &[t], &sh(1), true).unwrap();
        assert!(start.elapsed() < Duration::from_secs(2));
        assert_eq!(m.rows["a"], vec![false]);
        assert_eq!(v[0].reason, "timeout");
    }

    #[test]
    fn missing_runner() {
        let t = Example::new("a", "r", "c").with_tests(vec!["x".into()]);
        let p = VerdictProvider::SubprocessRunner {
            command: vec!["definitely-not-a-real-interpreter".into()],
            timeout_secs: 1,
            max_processes: 1,
            file_extension: "py".into(),
        };
        assert!(matches!(
            obtain_verdicts(&[record("a", 0, "")], &[t], &p, true),
            Err(EvalError::RunnerNotFound(_))
        ));
    }

    #[test]
    fn gaps_and_duplicates_rejected() {
        let v = |i| Verdict {
            test_id: "a".into(),
            sample_index: i,
            pass: true,
            reason: String::new(),
        };
        assert!(matches!(
            matrix_from(&[record("a", 0, ""), record("a", 2, "")], &[v(0), v(2)]),
            Err(EvalError::MissingVerdict { sample_index: 1, .. })
        ));
        assert!(matches!(
            matrix_from(&[record("a", 0, ""), record("a", 0, "")], &[v(0), v(0)]),
            Err(EvalError::Duplicate { .. })
        ));
    }
}
