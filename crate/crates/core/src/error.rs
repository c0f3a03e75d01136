use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("file not found: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("npy format error in {}: {message}", path.display())]
    Npy { path: PathBuf, message: String },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("row mismatch {features} vs {responses}")]
    RowMismatch { features: usize, responses: usize },

    #[error("features not yet downsampled")]
    NotDownsampled,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("story shorter than window ({duration} s < {window} s)")]
    StoryTooShort { duration: f64, window: f64 },

    #[error("extrapolation requested: target {target} s outside [{first}, {last}] s")]
    Extrapolation { target: f64, first: f64, last: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("empty ROI `{0}`: no voxels survive the mask")]
    EmptyRoi(String),

    #[error("unknown label `{label}` for {vocabulary}")]
    UnknownLabel { label: String, vocabulary: String },

    #[error("nothing to report")]
    NothingToReport,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    /// True for errors caused by bad or missing inputs rather than by the
    /// computation itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_)
                | Error::InsufficientData(_)
                | Error::EmptyRoi(_)
                | Error::NothingToReport
        )
    }
}
