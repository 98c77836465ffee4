//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} record #{record}: {msg}")]
    MalformedRecord {
        format: &'static str,
        record: u64,
        msg: String,
    },

    #[error("not a dbgc container (bad magic)")]
    BadMagic,

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("container checksum mismatch")]
    ChecksumMismatch,

    #[error("container truncated")]
    Truncated,

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by damaged or foreign input files, as opposed
    /// to i/o failures or bad arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedRecord { .. }
                | Error::BadMagic
                | Error::UnsupportedVersion(_)
                | Error::ChecksumMismatch
                | Error::Truncated
                | Error::Corrupt(_)
        )
    }
}
