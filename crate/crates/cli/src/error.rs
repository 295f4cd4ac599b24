use std::path::PathBuf;

/// Process exit codes. Clap's own usage errors also exit with `USAGE`.
pub mod exit {
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const DATA: i32 = 5;
    pub const CLASS_MISMATCH: i32 = 6;
    pub const TRAINING: i32 = 7;
    pub const CHECKPOINT: i32 = 8;
    pub const INTERNAL: i32 = 70;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] nmslab::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use nmslab::Error as E;
        match self {
            Self::Usage(_) => exit::USAGE,
            Self::Io { .. } => exit::IO,
            Self::Toml { .. } => exit::CONFIG,
            Self::Lib(e) => match e {
                E::Io { .. } => exit::IO,
                E::Config(_) | E::Toml(_) | E::InvalidBins(_) | E::NoThresholds | E::InfeasibleOcclusion { .. } => {
                    exit::CONFIG
                }
                E::Parse { .. } | E::InvalidRecord { .. } | E::Json(_) => exit::DATA,
                E::ClassMismatch { .. } => exit::CLASS_MISMATCH,
                E::NonFiniteLoss { .. } => exit::TRAINING,
                E::Checkpoint(_) => exit::CHECKPOINT,
                _ => exit::INTERNAL,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
