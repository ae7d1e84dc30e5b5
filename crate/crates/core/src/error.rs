//! Crate-wide error type.
//!
//! Two broad classes matter to callers: usage/validation problems (bad
//! arguments, malformed files, shape mismatches) and numerical failures
//! (singular systems, divergence, non-convergence). The CLI maps the
//! former to exit code 1 and the latter to exit code 2; see
//! [`Error::is_numerical`].

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied values was violated.
    #[error("validation error: {0}")]
    Validation(String),

    /// Matrix/vector dimensions do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Tensor shapes fail to compose through the network.
    #[error("shape error: {0}")]
    Shape(String),

    /// A linear system was singular and no ridge was requested.
    #[error("singular system: numerical rank {rank} < {dim}; set a positive ridge to regularize")]
    Singular { rank: usize, dim: usize },

    /// An iterative decomposition failed to converge.
    #[error("failed to converge: {0}")]
    Convergence(String),

    /// A solver or trainer produced non-finite values.
    #[error("diverged: {0}")]
    Divergence(String),

    /// No rank assignment can satisfy the complexity budget.
    #[error("infeasible plan: {0}")]
    Infeasible(String),

    /// A model/dataset file could not be decoded.
    #[error("{}: {kind}", path.display())]
    Load { path: PathBuf, kind: LoadError },

    /// An error attributed to a specific network layer.
    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Decoding failures, kept distinct so tests and callers can tell a bad
/// magic from a truncated payload from a manifest/blob disagreement.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("bad magic bytes, expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated: {0}")]
    Truncated(String),

    #[error("shape disagreement: {0}")]
    ShapeMismatch(String),
}

impl Error {
    /// Attach a layer index to an error raised while processing that layer.
    pub fn at_layer(self, layer: usize) -> Error {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }

    /// Whether this is a numerical failure (as opposed to a usage error).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::Convergence(_) | Error::Divergence(_) => true,
            Error::AtLayer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
