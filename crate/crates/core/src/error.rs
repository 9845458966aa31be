use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated input while reading {context}")]
    Truncated { context: String },

    #[error("record dimensions overflow the size cap: {entries} entries > {cap}")]
    DimensionOverflow { entries: u64, cap: u64 },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("invalid record {image_id:?}: {summary}")]
    InvalidRecord { image_id: String, summary: String },

    #[error("duplicate image id {0:?}")]
    DuplicateId(String),

    #[error("record count mismatch: header says {declared}, wrote {written}")]
    CountMismatch { declared: u64, written: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector passed to {0}")]
    ZeroNorm(&'static str),

    #[error("eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("requested {requested} out of range 1..={available}")]
    OutOfRange { requested: usize, available: usize },
}
