//! Volume file formats: MetaImage input and NIfTI-1 working files.

pub mod mhd;
pub mod nifti;

use std::path::Path;

use thiserror::Error;

use crate::volume::{Volume, VolumeError};

pub use mhd::{read_mhd, write_mhd, MhdHeader};
pub use nifti::{read_nifti, write_nifti, Nifti1Header};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed MetaImage header (line {line}): {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("unsupported MetaImage element type {0}")]
    UnsupportedElementType(String),
    #[error("raw data holds {actual} bytes, header declares {expected}")]
    RawSizeMismatch { expected: usize, actual: u64 },
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid NIfTI header: {0}")]
    BadNiftiHeader(String),
    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads any supported volume file, dispatching on the extension.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, FormatError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("mhd" | "mha") => read_mhd(path),
        _ => read_nifti(path),
    }
}

/// MetaImage to NIfTI-1, lossless for the supported element types.
pub fn convert(mhd_path: impl AsRef<Path>, nifti_path: impl AsRef<Path>) -> Result<(), FormatError> {
    let v = read_mhd(mhd_path)?;
    write_nifti(&v, nifti_path)
}
