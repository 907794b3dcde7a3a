//! Requirement/code datasets in MBPP-style line-delimited JSON.
//!
//! Each line carries exactly the keys `id`, `requirement`, `code` and `tests`.
//! The train split is the candidate pool that labeling, training and
//! retrieval draw in-context examples from.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

/// One requirement/code/test-cases record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub requirement: String,
    pub code: String,
    pub tests: Vec<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, requirement: impl Into<String>, code: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            requirement: requirement.into(),
            code: code.into(),
            tests: Vec::new(),
        }
    }

    pub fn with_tests(mut self, tests: Vec<String>) -> Self {
        self.tests = tests;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub language_tag: String,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Candidate pool R.
    pub fn pool(&self) -> &[Example] {
        &self.train
    }

    pub fn find(&self, id: &str) -> Option<&Example> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .find(|e| e.id == id)
    }

    /// Writes each non-empty split to `<dir>/<split>.jsonl`.
    pub fn export(&self, dir: &Path) -> Result<SplitPaths, CorpusError> {
        let mut paths = SplitPaths::default();
        for split in [Split::Train, Split::Dev, Split::Test] {
            let examples = self.split(split);
            if examples.is_empty() && split != Split::Train {
                continue;
            }
            let path = dir.join(format!("{split}.jsonl"));
            jsonl::write_jsonl(&path, examples)?;
            paths.set(split, path);
        }
        Ok(paths)
    }
}

/// Split name to file mapping. Train is required; dev and test may be absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPaths {
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

impl SplitPaths {
    pub fn new(train: impl Into<PathBuf>) -> Self {
        SplitPaths {
            train: Some(train.into()),
            ..Default::default()
        }
    }

    pub fn with_test(mut self, test: impl Into<PathBuf>) -> Self {
        self.test = Some(test.into());
        self
    }

    pub fn with_dev(mut self, dev: impl Into<PathBuf>) -> Self {
        self.dev = Some(dev.into());
        self
    }

    pub fn get(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => self.train.as_deref(),
            Split::Dev => self.dev.as_deref(),
            Split::Test => self.test.as_deref(),
        }
    }

    fn set(&mut self, split: Split, path: PathBuf) {
        match split {
            Split::Train => self.train = Some(path),
            Split::Dev => self.dev = Some(path),
            Split::Test => self.test = Some(path),
        }
    }

    /// Resolves relative split paths against `base`.
    pub fn resolve(&self, base: &Path) -> SplitPaths {
        let join = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
        SplitPaths {
            train: join(&self.train),
            dev: join(&self.dev),
            test: join(&self.test),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing dataset file {path}")]
    MissingFile { path: PathBuf },
    #[error("no train split configured")]
    NoTrainSplit,
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("dataset failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

const REQUIRED_FIELDS: [&str; 4] = ["id", "requirement", "code", "tests"];

fn read_split(path: &Path) -> Result<Vec<Example>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not a JSON object".into()))?;
        if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(CorpusError::MissingField {
                path: path.to_path_buf(),
                line: lineno,
                field,
            });
        }
        let example: Example = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        out.push(example);
    }
    Ok(out)
}

/// Loads and validates a dataset. Any validation finding is an error.
pub fn load_dataset(name: &str, language_tag: &str, splits: &SplitPaths) -> Result<Dataset, CorpusError> {
    let train_path = splits.train.as_deref().ok_or(CorpusError::NoTrainSplit)?;
    let train = read_split(train_path)?;
    let dev = splits.dev.as_deref().map(read_split).transpose()?.unwrap_or_default();
    let test = splits.test.as_deref().map(read_split).transpose()?.unwrap_or_default();
    let dataset = Dataset {
        name: name.to_string(),
        language_tag: language_tag.to_string(),
        train,
        dev,
        test,
    };
    let findings = validate_dataset(&dataset);
    if let Some(dup) = findings.iter().find(|f| f.kind == FindingKind::DuplicateId) {
        return Err(CorpusError::DuplicateId { id: dup.id.clone() });
    }
    if !findings.is_empty() {
        let joined = findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(CorpusError::Invalid(joined));
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    EmptyId,
    DuplicateId,
    EmptyRequirement,
    EmptyCode,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingKind::EmptyId => "empty id",
            FindingKind::DuplicateId => "duplicate id",
            FindingKind::EmptyRequirement => "empty requirement",
            FindingKind::EmptyCode => "empty code",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub split: Split,
    pub id: String,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}` ({})", self.kind, self.id, self.split)
    }
}

/// Checks every Example and Dataset invariant. An empty result means valid.
///
/// A duplicate is reported once per repeated occurrence, on the split where
/// the repeat was seen.
pub fn validate_dataset(d: &Dataset) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        for ex in d.split(split) {
            let mut push = |kind| {
                findings.push(Finding {
                    split,
                    id: ex.id.clone(),
                    kind,
                })
            };
            if ex.id.trim().is_empty() {
                push(FindingKind::EmptyId);
            } else if seen.insert(ex.id.as_str(), split).is_some() {
                push(FindingKind::DuplicateId);
            }
            if ex.requirement.trim().is_empty() {
                push(FindingKind::EmptyRequirement);
            }
            if ex.code.trim().is_empty() {
                push(FindingKind::EmptyCode);
            }
        }
    }
    findings
}

/// Ids of the given examples, for set-style membership checks.
pub fn id_set(examples: &[Example]) -> BTreeSet<&str> {
    examples.iter().map(|e| e.id.as_str()).collect()
}
