use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file did not match its expected on-disk format.
    #[error("parse error in {path}:{record}: {message}")]
    Parse {
        path: PathBuf,
        /// 1-based line or record index.
        record: usize,
        message: String,
    },

    /// Structurally valid input violating a schema invariant.
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    /// Invalid argument to an operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value outside the range covered by the data.
    #[error("out of range: {0}")]
    Range(String),

    /// Configuration field violating an invariant.
    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A pipeline stage was run before its prerequisites.
    #[error("missing prerequisite artifact `{artifact}`: run the `{stage}` stage first")]
    StageDependency { artifact: String, stage: String },

    /// An upstream artifact changed after a downstream stage consumed it.
    #[error("stale artifact `{artifact}`: content hash changed since it was recorded")]
    StaleArtifact { artifact: String },

    /// Checkpoint or data file version not understood by this build.
    #[error("version mismatch in {path}: found {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    /// Checksum failure or truncation while reading a binary artifact.
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    /// Training diverged or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A model was used before it was trained.
    #[error("model not trained: {0}")]
    Untrained(String),

    /// Silent-lexeme lookup with an empty silent set; callers should keep
    /// the current lexeme as a fallback.
    #[error("no silent lexemes labeled; keep the current lexeme")]
    NoSilentLexemes,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, record: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            record,
            message: message.into(),
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 dependency, 4 numerical,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::StageDependency { .. } | Error::StaleArtifact { .. } => 3,
            Error::Numerical(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
