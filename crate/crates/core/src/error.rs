use std::path::PathBuf;

/// Errors produced by the colorization library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{op} is not differentiable here: {detail}")]
    NotDifferentiable { op: &'static str, detail: String },

    #[error("weight manifest error in {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("layer `{layer}` expects shape {expected:?}, manifest has {found:?}")]
    LayerShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor `{0}` in weight manifest")]
    MissingTensor(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at step {step}: {detail}")]
    TrainingAborted {
        step: u64,
        detail: String,
        diagnostic: Option<PathBuf>,
    },

    #[error("failed to decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
