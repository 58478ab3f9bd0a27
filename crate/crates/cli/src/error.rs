use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Syntax error, unknown key or wrong type, with the parser's line diagnostics.
    #[error("config parse error: {0}")]
    Parse(String),

    /// A well-formed config with an invalid value; `field` is the dotted key path.
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error(transparent)]
    Core(#[from] froglab_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },

    #[error("manifest {0} is incomplete; rerun the experiment before reporting")]
    IncompleteManifest(PathBuf),

    #[error("result file {0} does not match the checksum recorded in the manifest")]
    ChecksumMismatch(PathBuf),

    #[error("experiment {index} ({kind}) failed: {source}; partial outputs are marked incomplete in {manifest}")]
    Experiment {
        index: usize,
        kind: String,
        manifest: PathBuf,
        #[source]
        source: Box<CliError>,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    pub(crate) fn field(field: impl Into<String>, message: impl ToString) -> Self {
        Self::Field { field: field.into(), message: message.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
