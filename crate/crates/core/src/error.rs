use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while parsing a tensor container.
///
/// Every malformed-input condition gets its own variant so callers (and the
/// fuzz harness) can tell them apart.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {found:?}, expected \"ZSTN\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },
    #[error("tensor {name:?}: payload has {found} elements, dims imply {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("tensor {name:?}: unknown dtype code {code}")]
    BadDtype { name: String, code: u8 },
    #[error("tensor name is not valid UTF-8 or is empty")]
    BadName,
    #[error("tensor {name:?}: dims overflow the addressable size")]
    DimsOverflow { name: String },
    #[error("tensor {name:?}: non-finite value at element {index}")]
    NonFinite { name: String, index: usize },
    #[error("{count} trailing bytes after the last tensor")]
    TrailingBytes { count: usize },
    #[error("missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error("tensor {name:?}: {reason}")]
    BadTensor { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("empty matrix passed to {op}")]
    Empty { op: &'static str },
    #[error("SVD of a {rows}x{cols} matrix did not converge within {sweeps} sweeps")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error(
        "C + lambda*I is not positive definite (n = {n}, lambda = {lambda:e}, pivot {pivot} = {value:e}); use a larger ridge"
    )]
    NotPositiveDefinite {
        n: usize,
        lambda: f64,
        pivot: usize,
        value: f64,
    },
    #[error("triangular factor is singular: diagonal entry {index} is zero")]
    SingularFactor { index: usize },
    #[error("spectrum has zero total energy")]
    ZeroSpectrum,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report serialization failed: {0}")]
    Report(#[from] serde_json::Error),
}

/// Failure category, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Numeric => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Format(_) | Error::Io { .. } | Error::Report(_) => Category::Io,
            _ => Category::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
