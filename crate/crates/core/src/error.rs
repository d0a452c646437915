use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::knowledge::KbError;
use crate::lattice::LatticeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Knowledge(#[from] KbError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("pair too long: {len_a} + {len_b} characters plus 3 markers exceeds max_len {max_len}")]
    Overlength { len_a: usize, len_b: usize, max_len: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("{op}: empty input set")]
    EmptySet { op: &'static str },
    #[error("character {index} is not covered by any lattice node")]
    Uncovered { index: usize },
    #[error("no examples to evaluate")]
    NoExamples,
    #[error("non-finite gradient for parameter `{path}`")]
    NonFiniteGradient { path: String },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
