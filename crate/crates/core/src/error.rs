use std::path::PathBuf;

/// Errors produced anywhere in the toolchain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in node `{node}` at `{field}`: {message}")]
    Parse {
        node: String,
        field: String,
        message: String,
    },
    #[error("shape rule violated at node `{node}`: {message}")]
    Shape { node: String, message: String },
    #[error("dangling reference: node `{node}` consumes unknown tensor `{input}`")]
    DanglingRef { node: String, input: String },
    #[error("blob size mismatch: {0}")]
    BlobMismatch(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("quantization error: {0}")]
    Quantization(String),
    #[error("pruning error: {0}")]
    Pruning(String),
    #[error("illegal schedule: {0}")]
    IllegalSchedule(String),
    #[error("lowering error: {0}")]
    Lowering(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("feature `{0}` is disabled in the accelerator configuration")]
    FeatureDisabled(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(stage: &str, err: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(err),
        }
    }

    /// Process exit code for the command-line front end:
    /// 2 validation, 3 simulation, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::Csv(_) => 4,
            Error::Simulation(_) => 3,
            _ => 2,
        }
    }
}
