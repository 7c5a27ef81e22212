use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GazeError {
    #[error(transparent)]
    Autograd(#[from] depthgaze_autograd::AutogradError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing image file {0}")]
    MissingImage(PathBuf),

    #[error("line {line}: {field}: {message}")]
    Annotation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid sample {id}: {}", violations.join("; "))]
    InvalidSample { id: String, violations: Vec<String> },

    #[error("unknown fusion variant `{0}` (expected full or v1..v11)")]
    UnknownVariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: could not place sample {index} after {attempts} attempts")]
    DegenerateGeometry { index: usize, attempts: usize },

    #[error("non-finite loss in term `{term}` at step {step}")]
    NonFiniteLoss { term: String, step: u64 },

    #[error("{0}")]
    Loss(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GazeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GazeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, GazeError>;
