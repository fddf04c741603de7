use std::path::PathBuf;

use crate::volume::GridMeta;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI data at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("incompatible grid in {name}: expected {expected}, found {found}")]
    IncompatibleGrid {
        name: String,
        expected: GridMeta,
        found: GridMeta,
    },

    #[error("label {0} is not in the label table")]
    UnknownLabel(u32),

    #[error("label {0} has no supported voxels")]
    EmptySupport(u32),

    #[error("distance transform of an empty mask is undefined")]
    EmptyMask,

    #[error("label {0} has zero mean volume over the training set")]
    DegenerateLabel(u32),

    #[error("label {label} ({voxels} voxels) is not covered by the merge plan")]
    UnmappedLabel { label: u32, voxels: usize },

    #[error("no influence map for merged label {0}")]
    MissingInfluenceMap(u32),

    #[error("digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("phantom packing failed: {0}")]
    Packing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::UnsupportedDatatype(_) => "unsupported_datatype",
            Error::IncompatibleGrid { .. } => "incompatible_grid",
            Error::UnknownLabel(_) => "unknown_label",
            Error::EmptySupport(_) => "empty_support",
            Error::EmptyMask => "empty_mask",
            Error::DegenerateLabel(_) => "degenerate_label",
            Error::UnmappedLabel { .. } => "unmapped_label",
            Error::MissingInfluenceMap(_) => "missing_influence_map",
            Error::DigestMismatch { .. } => "digest_mismatch",
            Error::Packing(_) => "packing",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Json(_) => "json",
        }
    }

    /// True when the failure is caused by the caller's inputs rather than a
    /// fault in the pipeline itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}
