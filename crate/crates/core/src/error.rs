use std::fmt;

use crate::scene::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Format,
    Io,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Validation => "validation",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Format => "format",
            ErrorKind::Io => "io",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {}", join_violations(.0))]
    InvalidScene(Vec<Violation>),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid assembly: {0}")]
    InvalidAssembly(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("footprint out of domain: {0}")]
    OutOfDomain(String),

    #[error("solver did not converge in {iterations} iterations (relative residual {achieved_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        achieved_residual: f64,
    },

    #[error("sweep value {value}: {source}")]
    Sweep { value: String, source: Box<Error> },

    #[error("scan line {line} tick {tick}: {source}")]
    Scan {
        line: usize,
        tick: usize,
        source: Box<Error>,
    },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidScene(_)
            | Error::UnknownPreset(_)
            | Error::InvalidAssembly(_)
            | Error::InvalidParameter(_)
            | Error::OutOfDomain(_) => ErrorKind::Validation,
            Error::NonConvergence { .. } => ErrorKind::Numerical,
            Error::Sweep { source, .. } | Error::Scan { source, .. } => source.kind(),
            Error::Format(_) => ErrorKind::Format,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
