//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. Names the file and, for line-oriented
    /// formats, the offending line.
    #[error("parse error in {path}{}: {message}", line.map(|n| format!(":{n}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        message: String,
    },

    /// A record violates a type invariant. Names the offending field.
    #[error("validation error in {context}: field `{field}`: {message}")]
    Validation {
        context: String,
        field: String,
        message: String,
    },

    /// An object id referenced by a question or mask does not exist in
    /// the scene.
    #[error("unknown object id {id} in scene {scene_id}")]
    UnknownId { scene_id: String, id: i64 },

    /// Tensor operands have incompatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Weighted BCE with every label in one class; the weighting divides
    /// by both class counts, so callers fall back to the unweighted mean.
    #[error("degenerate classes in weighted BCE: c0={c0}, c1={c1}")]
    DegenerateClass { c0: usize, c1: usize },

    /// Improvement ratio with score_objectids == score_none.
    #[error("improvement ratio undefined: object-id score equals the no-mask score ({score})")]
    ZeroDenominator { score: f64 },

    /// Training aborted on a non-finite loss.
    #[error("divergence at epoch {epoch}, sample {sample}: loss = {loss}")]
    Divergence {
        epoch: usize,
        sample: usize,
        loss: f64,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(
        context: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            context: context.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Exit-code bucket for the CLI: 1 for bad inputs, 2 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::UnknownId { .. }
            | Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
