//! File codecs for pipeline artifacts.
//!
//! Binary is used only for Stokes images ([`psi`]); patterns, point clouds,
//! and truth tables are line-oriented text so artifacts stay diff-able and
//! portable across implementations. Every codec round-trips bit-exactly:
//! floats in the text formats print with the shortest decimal form that
//! parses back to the same bits, and absent values are written as explicit
//! `NA` sentinels, never as silent zeros.

pub mod cloud;
pub mod pattern;
pub mod psi;
pub mod truth;

pub use cloud::{read_cloud, write_cloud, CloudFile, CloudPoint};
pub use pattern::{read_pattern, write_pattern, PatternFile};
pub use psi::{decode_psi, encode_psi, read_psi, write_psi};
pub use truth::{read_truth, write_truth};

use thiserror::Error;

/// Errors raised by the file codecs. Binary errors carry the byte offset of
/// the offending field, text errors the 1-based line number.
#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("byte {offset}: {msg}")]
    Binary { offset: u64, msg: String },
    #[error("line {line}: {msg}")]
    Text { line: usize, msg: String },
    #[error("{msg}")]
    Invalid { msg: String },
}

impl IoError {
    fn binary(offset: usize, msg: impl Into<String>) -> Self {
        IoError::Binary {
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn text(line: usize, msg: impl Into<String>) -> Self {
        IoError::Text {
            line,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        IoError::Invalid { msg: msg.into() }
    }
}
