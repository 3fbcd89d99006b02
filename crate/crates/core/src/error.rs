use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants are grouped so a driver can map them onto exit codes:
/// input problems ([`Error::is_validation`]) versus numerical failures
/// ([`Error::is_numerical`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid json in {file}: {source}")]
    Json {
        file: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid meta-path: {0}")]
    MetaPath(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: loss={loss}, largest gradient in {param} (|g|={grad_norm:e})")]
    Diverged {
        epoch: usize,
        loss: f64,
        param: String,
        grad_norm: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Numerical failures: divergence, NaN, domain violations.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Domain { .. })
    }

    /// Everything the caller can fix by changing inputs or configuration.
    pub fn is_validation(&self) -> bool {
        !self.is_numerical()
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::Parse { .. } => "parse",
            Error::Json { .. } => "json",
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::MetaPath(_) => "metapath",
            Error::Shape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::Contract(_) => "contract",
            Error::Diverged { .. } => "diverged",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
