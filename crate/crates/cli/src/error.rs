use std::io;
use std::path::PathBuf;

use thiserror::Error;
use voxmocap::formats::FormatError;
use voxmocap::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] FormatError),
    #[error("{0}")]
    Usage(String),
    #[error("frame mismatch in {stream}: expected {expected}, found {found}")]
    FrameMismatch {
        stream: String,
        expected: String,
        found: String,
    },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
    #[error("evaluation failed: {0}")]
    Evaluation(#[from] MetricsError),
}

impl CliError {
    /// Process exit status: 2 for bad input, 3 for misaligned streams.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Usage(_) => 2,
            CliError::FrameMismatch { .. } => 3,
            CliError::Output { .. } | CliError::Evaluation(_) => 1,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Output { path, source }
    }

    pub(crate) fn mismatch(stream: &str, expected: Option<u64>, found: Option<u64>) -> CliError {
        let show = |f: Option<u64>| f.map_or("end of stream".to_string(), |f| format!("frame {f}"));
        CliError::FrameMismatch {
            stream: stream.to_string(),
            expected: show(expected),
            found: show(found),
        }
    }
}
