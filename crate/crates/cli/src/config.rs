use std::path::{Path, PathBuf};

use lail_core::corpus::SplitPaths;
use lail_core::evaluation::VerdictProvider;
use lail_core::gateway::{GenerationParams, ProviderConfig, ProviderKind};
use lail_core::labeling::LabelConfig;
use lail_core::selection::{check_shot_count, SelectionConfig};
use lail_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub providers: Providers,
    #[serde(default)]
    pub label: LabelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("lail-out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default = "default_language")]
    pub language_tag: String,
    #[serde(flatten)]
    pub splits: SplitPaths,
}

fn default_language() -> String {
    "python".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    #[serde(default = "default_scorer")]
    pub scorer: ProviderConfig,
    #[serde(default = "default_generator")]
    pub generator: ProviderConfig,
    #[serde(default = "default_embedder")]
    pub embedder: ProviderConfig,
}

fn default_scorer() -> ProviderConfig {
    ProviderConfig::of_kind(ProviderKind::MockScorer)
}

fn default_generator() -> ProviderConfig {
    ProviderConfig::of_kind(ProviderKind::MockGenerator)
}

fn default_embedder() -> ProviderConfig {
    ProviderConfig::of_kind(ProviderKind::HashEmbedder)
}

impl Default for Providers {
    fn default() -> Self {
        Providers {
            scorer: default_scorer(),
            generator: default_generator(),
            embedder: default_embedder(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub generation: GenerationParams,
    /// For `external_file`, the path may contain `{strategy}` and `{run}`
    /// and is resolved against the output directory.
    pub verdicts: VerdictProvider,
    /// Independent sampling runs averaged into each report.
    pub runs: usize,
    pub baseline: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 3, 5],
            generation: GenerationParams::default(),
            verdicts: VerdictProvider::ExternalFile {
                path: PathBuf::from("verdicts/{strategy}-run{run}.jsonl"),
            },
            runs: 1,
            baseline: None,
        }
    }
}

/// Sets `dotted.key` in `root` to `raw`, parsed as JSON when possible and
/// as a plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("override key `{key}` has an empty segment")));
        }
        let map = match node {
            Value::Object(m) => m,
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().expect("just set")
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl PipelineConfig {
    /// Reads the file, applies overrides, resolves relative paths against
    /// the file's directory and checks cross-field constraints.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.dataset.splits = cfg.dataset.splits.resolve(base);
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad("eval.ks must be non-empty positive integers".into());
        }
        if let Some(k) = self.eval.ks.iter().find(|&&k| k > self.eval.generation.n_samples) {
            return bad(format!(
                "eval.ks contains {k}, more than n_samples = {}",
                self.eval.generation.n_samples
            ));
        }
        if self.eval.runs == 0 {
            return bad("eval.runs must be positive".into());
        }
        if self.train.tau_ne > self.label.v {
            return bad(format!(
                "train.tau_ne ({}) exceeds label.v ({})",
                self.train.tau_ne, self.label.v
            ));
        }
        if self.selection.strategies.is_empty() {
            return bad("selection.strategies is empty".into());
        }
        check_shot_count(self.selection.r).map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.eval
            .generation
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for p in [
            &self.providers.scorer,
            &self.providers.generator,
            &self.providers.embedder,
        ] {
            p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Points the dataset at `<dir>/{train,dev,test}.jsonl`, naming it after the directory.
    pub fn use_dataset_dir(&mut self, dir: &Path) {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        let optional = |f: &str| Some(dir.join(f)).filter(|p| p.exists());
        self.dataset.name = name;
        self.dataset.splits = SplitPaths {
            train: Some(dir.join("train.jsonl")),
            dev: optional("dev.jsonl"),
            test: Some(dir.join("test.jsonl")),
        };
    }
}
