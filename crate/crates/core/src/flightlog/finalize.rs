use std::path::PathBuf;

use thiserror::Error;

use super::parse::scan;
use super::wire::{close, encode_header};
use crate::imaging::StorageImage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FinalizeError {
    #[error(
        "NOT_A_CLONE: {0} is not a writable clone; finalization never runs against an original"
    )]
    NotAClone(PathBuf),
    #[error("ALREADY_CLOSED: log already carries a valid footer")]
    AlreadyClosed,
}

/// Closes an unclosed log the way the recorder would have on its next power
/// cycle: every recovered frame is kept, anything unattributable is dropped,
/// and a footer is appended. `clone_image` is the clone the log was taken
/// from; finalization is refused unless it is one.
///
/// When the input is a clean unclosed file (intact frames, footer missing)
/// the output is the input plus the 9-byte footer.
pub fn finalize_log(
    clone_image: &StorageImage,
    log_bytes: &[u8],
) -> Result<Vec<u8>, FinalizeError> {
    if !clone_image.is_clone || clone_image.read_only {
        return Err(FinalizeError::NotAClone(clone_image.image_path.clone()));
    }
    let scan = scan(log_bytes);
    if scan.log.closed {
        return Err(FinalizeError::AlreadyClosed);
    }
    let mut out = Vec::with_capacity(log_bytes.len() + super::FOOTER_LEN);
    match scan.header_bytes {
        Some(range) => out.extend_from_slice(&log_bytes[range]),
        None => out.extend_from_slice(&encode_header(&scan.log.header)),
    }
    for span in &scan.frame_spans {
        out.extend_from_slice(&log_bytes[span.clone()]);
    }
    close(&mut out, scan.frame_spans.len() as u32);
    Ok(out)
}
