use thiserror::Error;

use crate::dataset::DataError;
use crate::featbank::FeatureError;
use crate::nas::NasError;

/// Crate-level error. [`Error::exit_code`] maps each class onto the CLI
/// contract: 1 configuration, 2 data, 3 numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Feature(#[from] FeatureError),

    #[error(transparent)]
    Nas(#[from] NasError),

    #[error("network: {0}")]
    Nn(#[from] stressnas_nn::NnError),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fold {subject}: {source}")]
    Fold {
        subject: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("report: {0}")]
    Report(String),

    #[error("held-out subject {0} appeared in a training, validation or scoring batch")]
    Leakage(u32),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Report(_) | Error::Leakage(_) => 2,
            Error::Feature(e) => {
                if e.is_config() {
                    1
                } else {
                    2
                }
            }
            Error::Nas(NasError::EigenSolver) => 3,
            Error::Nas(_) => 1,
            Error::Nn(stressnas_nn::NnError::NonFinite(_)) | Error::Numerical(_) => 3,
            Error::Nn(_) => 2,
            Error::Fold { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
