use thiserror::Error;

use crate::process::Violation;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of a function or operator.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    /// A solver precondition on the model does not hold (law type, self-jumps, missing callables).
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("singular linear system at step {step}: {context}")]
    Singular { step: usize, context: String },

    /// Numerical inversion or quadrature did not produce a usable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("model document: {0}")]
    Document(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
