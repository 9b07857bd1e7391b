use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated file: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("declared dimensions overflow the addressable size")]
    DimOverflow,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("{context}: {message}")]
    Json { context: String, message: String },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Core(#[from] voxinv_core::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
