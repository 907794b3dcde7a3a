use lail_core::corpus::CorpusError;
use lail_core::evaluation::EvalError;
use lail_core::gateway::GatewayError;
use lail_core::jsonl::JsonlError;
use lail_core::labeling::LabelingError;
use lail_core::selection::SelectionError;
use lail_core::training::TrainError;

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing upstream artifact: {0}")]
    Missing(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Failed(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Provider(_) => 3,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            e if e.is_provider_failure() => CliError::Provider(e.to_string()),
            GatewayError::Config(_) | GatewayError::InvalidParams(_) => CliError::Config(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::MissingFile { .. } | CorpusError::NoTrainSplit => CliError::Missing(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<LabelingError> for CliError {
    fn from(e: LabelingError) -> Self {
        match e {
            LabelingError::Gateway(g) => g.into(),
            LabelingError::Io(j) => j.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Gateway(g) => g.into(),
            TrainError::Config(_) | TrainError::FingerprintMismatch { .. } | TrainError::TooFewNegatives { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Gateway(g) => g.into(),
            SelectionError::Train(t) => t.into(),
            SelectionError::InvalidShotCount(_) => CliError::Config(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) => g.into(),
            EvalError::Selection(s) => s.into(),
            EvalError::Jsonl(j) => j.into(),
            EvalError::ConsentRequired | EvalError::EmptyCommand | EvalError::RunnerNotFound(_) => {
                CliError::Config(e.to_string())
            }
            EvalError::MissingVerdict { .. } => CliError::Missing(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}
