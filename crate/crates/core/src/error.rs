use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("empty classifier list")]
    EmptyClassifiers,

    #[error("provider returned empty")]
    EmptyResponse,

    #[error("provider dim drift: expected {expected}, got {got}")]
    DimDrift { expected: usize, got: usize },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("provider rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },

    #[error("provider misconfigured: {0}")]
    Provider(String),

    #[error("no candidates reasoned")]
    NoCandidates,

    #[error("template {template}: {message}")]
    Template { template: String, message: String },

    #[error("image {id}: {message}")]
    Image { id: String, message: String },

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("class {class:?} has {available} images, {required} required")]
    ClassTooSmall {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {message}", path.display())]
    RunDir { path: PathBuf, message: String },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Errors caused by bad user input (paths, config) rather than runtime failures.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_usage(),
            Error::Manifest { .. } | Error::Config(_) | Error::RunDir { .. } => true,
            _ => false,
        }
    }
}
