use std::io;
use std::path::PathBuf;

/// Errors surfaced by the file formats and the CLI, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("cannot open {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AppError {
    /// 2 usage, 3 data, 4 numerical divergence, 5 integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::MissingFile { .. } => 2,
            AppError::Data(_) | AppError::Parse { .. } | AppError::MissingColumn(_) | AppError::Io(_) => 3,
            AppError::Divergence(_) => 4,
            AppError::Integrity(_) | AppError::UnsupportedVersion { .. } => 5,
        }
    }
}

impl From<menode_core::Error> for AppError {
    fn from(e: menode_core::Error) -> Self {
        if e.is_divergence() {
            AppError::Divergence(e.to_string())
        } else {
            AppError::Data(e.to_string())
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

pub(crate) fn open(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| AppError::MissingFile {
        path: path.to_path_buf(),
        source,
    })
}
