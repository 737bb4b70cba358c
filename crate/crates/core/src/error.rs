use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("tag scheme error: {0}")]
    Scheme(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("lexicon build error: {0}")]
    Build(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 1,
            Category::Data => 2,
            Category::Numeric => 3,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Argument(_) => Category::Config,
            Error::Numeric(_) => Category::Numeric,
            _ => Category::Data,
        }
    }
}
