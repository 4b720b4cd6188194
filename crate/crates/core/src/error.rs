use std::fmt;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numeric error in client {client}: {msg}")]
    Numeric { client: usize, msg: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{0}")]
    Divergence(DivergenceInfo),

    #[error("configuration error{}: {msg}", location(.key, .line))]
    Config {
        key: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn location(key: &str, line: &Option<usize>) -> String {
    match (key.is_empty(), line) {
        (true, None) => String::new(),
        (true, Some(l)) => format!(" at line {l}"),
        (false, None) => format!(" for key `{key}`"),
        (false, Some(l)) => format!(" for key `{key}` at line {l}"),
    }
}

/// Where and how an iterate blew past the divergence guard.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceInfo {
    pub step: usize,
    pub norm: f64,
    pub round: Option<usize>,
    pub algorithm: Option<String>,
}

impl fmt::Display for DivergenceInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "divergence at step {} (iterate norm {:e})", self.step, self.norm)?;
        if let Some(r) = self.round {
            write!(f, " in round {r}")?;
        }
        if let Some(a) = &self.algorithm {
            write!(f, " running {a}")?;
        }
        Ok(())
    }
}

impl Error {
    pub fn config(key: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Attach round/algorithm context to a divergence error; other errors pass through.
    pub fn in_round(self, round: usize, algorithm: &str) -> Self {
        match self {
            Error::Divergence(mut info) => {
                info.round = Some(round);
                info.algorithm = Some(algorithm.to_string());
                Error::Divergence(info)
            }
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Usage(_) => 2,
            Error::Divergence(_) => 3,
            Error::Verification(_) => 4,
            _ => 1,
        }
    }
}
