use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed tensor or bundle file. `field` names the offending part.
    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input on which a kernel is undefined, e.g. an all-zero vector for the masked softmax.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Binarized segmentation mask selects no cells.
    #[error("segmentation mask is empty after binarization ({cells} cells)")]
    DegenerateMask { cells: usize },

    #[error("no edit candidates")]
    NoCandidates,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("no results")]
    NoResults,

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
