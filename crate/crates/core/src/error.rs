use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No root of the boundary-case equations inside the searched bracket.
    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("law rejected: {0}")]
    LawRejected(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("arena capacity of {cap} vertices exceeded")]
    ArenaFull { cap: usize },

    #[error("environment is extinct at the root")]
    Extinct,

    #[error("environment died out before generation {depth}")]
    ExtinctBefore { depth: u32 },

    #[error("singular first-step system: {0}")]
    Singular(String),

    /// A long-running pipeline stopped early; the caller still owns whatever
    /// state was accumulated up to `steps`.
    #[error("interrupted after {steps} steps: {source}")]
    Interrupted { steps: u64, source: Box<Error> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by running out of arena room, possibly wrapped.
    pub fn is_resource(&self) -> bool {
        match self {
            Error::ArenaFull { .. } => true,
            Error::Interrupted { source, .. } => source.is_resource(),
            _ => false,
        }
    }
}
