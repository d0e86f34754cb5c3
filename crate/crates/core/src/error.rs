use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, the simulator and the toy SGD engine.
#[derive(Debug, Error)]
pub enum Error {
    /// The input document could not be parsed at all.
    #[error("syntax error in {origin}: {message}")]
    Syntax { origin: String, message: String },

    /// A value violates a model invariant. `context` names the offending
    /// object (layer, profile, scenario row) and field.
    #[error("{context}: {message}")]
    Invariant { context: String, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: u64, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn invariant(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn syntax(origin: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Syntax {
            origin: origin.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
