use std::ops::Range;

use super::wire::{crc32, decode_frame, decode_header, FrameFault};
use super::{
    timestamp_regressions, DatHeader, FlightLog, ParseError, RecoveryReport, FOOTER_LEN,
    FOOTER_SYNC, FORMAT_VERSION, FRAME_SYNC, HEADER_LEN, MAGIC,
};

/// Parses a complete, closed DATv1 file. Any deviation is an error; an
/// otherwise intact file without its footer fails with
/// [`ParseError::MissingFooter`].
pub fn parse_strict(bytes: &[u8]) -> Result<FlightLog, ParseError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(ParseError::BadMagic);
    }
    if bytes.len() >= 6 {
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(ParseError::BadVersion { found: version });
        }
    }
    if bytes.len() < HEADER_LEN {
        return Err(ParseError::Truncated {
            offset: bytes.len() as u64,
        });
    }
    let header = decode_header(bytes[..HEADER_LEN].try_into().unwrap());

    let mut frames = Vec::new();
    let mut pos = HEADER_LEN;
    loop {
        let offset = pos as u64;
        let Some(&sync) = bytes.get(pos) else {
            return Err(ParseError::MissingFooter {
                offset,
                frames: frames.len() as u64,
            });
        };
        match sync {
            FRAME_SYNC => match decode_frame(&bytes[pos..]) {
                Ok((frame, len)) => {
                    frames.push(frame);
                    pos += len;
                }
                Err(FrameFault::Truncated) => return Err(ParseError::Truncated { offset }),
                Err(FrameFault::CrcMismatch) => {
                    return Err(ParseError::FrameCrcMismatch { offset })
                }
                Err(FrameFault::Malformed(reason)) => {
                    return Err(ParseError::MalformedFrame { offset, reason })
                }
            },
            FOOTER_SYNC => {
                if bytes.len() < pos + FOOTER_LEN {
                    return Err(ParseError::Truncated { offset });
                }
                check_footer(bytes, pos, frames.len())
                    .map_err(|reason| ParseError::FooterMismatch { offset, reason })?;
                if bytes.len() != pos + FOOTER_LEN {
                    return Err(ParseError::FooterMismatch {
                        offset,
                        reason: format!(
                            "{} bytes follow the footer",
                            bytes.len() - pos - FOOTER_LEN
                        ),
                    });
                }
                let timestamp_regressions = timestamp_regressions(&frames);
                return Ok(FlightLog {
                    header,
                    frames,
                    closed: true,
                    recovery: None,
                    timestamp_regressions,
                });
            }
            found => return Err(ParseError::BadSync { offset, found }),
        }
    }
}

/// Checks the 9-byte footer at `pos` against the frames seen so far.
fn check_footer(bytes: &[u8], pos: usize, frames_seen: usize) -> Result<(), String> {
    let footer = &bytes[pos..pos + FOOTER_LEN];
    let count = u32::from_le_bytes(footer[1..5].try_into().unwrap());
    let stored_crc = u32::from_le_bytes(footer[5..9].try_into().unwrap());
    if count as usize != frames_seen {
        return Err(format!(
            "footer counts {count} frames, file has {frames_seen}"
        ));
    }
    let actual = crc32(&bytes[..pos]);
    if actual != stored_crc {
        return Err(format!(
            "file CRC 0x{actual:08X} does not match footer 0x{stored_crc:08X}"
        ));
    }
    Ok(())
}

/// Result of a recovery scan, with the byte extents the salvage is built on.
pub(crate) struct Scan {
    pub log: FlightLog,
    /// Original header bytes, when the file had a valid one.
    pub header_bytes: Option<Range<usize>>,
    pub frame_spans: Vec<Range<usize>>,
}

pub(crate) fn scan(bytes: &[u8]) -> Scan {
    let header_ok = bytes.len() >= HEADER_LEN
        && bytes[..4] == MAGIC
        && u16::from_le_bytes([bytes[4], bytes[5]]) == FORMAT_VERSION;
    let (header, mut pos) = if header_ok {
        (
            decode_header(bytes[..HEADER_LEN].try_into().unwrap()),
            HEADER_LEN,
        )
    } else {
        (DatHeader::placeholder(), 0)
    };

    let mut consumed = pos;
    let mut frames = Vec::new();
    let mut spans = Vec::new();
    let mut dropped = 0u64;
    let mut garbage_run = false;
    let mut footers = Vec::new();

    while pos < bytes.len() {
        match bytes[pos] {
            FRAME_SYNC => {
                if let Ok((frame, len)) = decode_frame(&bytes[pos..]) {
                    if std::mem::take(&mut garbage_run) {
                        dropped += 1;
                    }
                    frames.push(frame);
                    spans.push(pos..pos + len);
                    consumed += len;
                    pos += len;
                    continue;
                }
            }
            FOOTER_SYNC
                if bytes.len() >= pos + FOOTER_LEN
                    && check_footer(bytes, pos, frames.len()).is_ok() =>
            {
                if std::mem::take(&mut garbage_run) {
                    dropped += 1;
                }
                footers.push(pos);
                consumed += FOOTER_LEN;
                pos += FOOTER_LEN;
                continue;
            }
            _ => {}
        }
        garbage_run = true;
        pos += 1;
    }
    let trailing_garbage = garbage_run;
    if trailing_garbage {
        dropped += 1;
    }

    let closed =
        header_ok && dropped == 0 && footers.len() == 1 && footers[0] + FOOTER_LEN == bytes.len();
    let recovery = (!closed).then_some(RecoveryReport {
        bytes_consumed: consumed as u64,
        bytes_total: bytes.len() as u64,
        frames_recovered: frames.len() as u64,
        frames_dropped: dropped,
        trailing_garbage,
        header_synthesized: !header_ok,
    });
    let timestamp_regressions = timestamp_regressions(&frames);
    Scan {
        log: FlightLog {
            header,
            frames,
            closed,
            recovery,
            timestamp_regressions,
        },
        header_bytes: header_ok.then_some(0..HEADER_LEN),
        frame_spans: spans,
    }
}

/// Salvages every CRC-valid frame from arbitrary bytes. Never fails: when
/// the header is missing a placeholder is used, the scan resynchronises one
/// byte at a time on the frame sync byte, and anything it cannot attribute
/// is accounted for in the [`RecoveryReport`]. On a file that
/// [`parse_strict`] accepts this returns the same frames with
/// `closed = true` and no report.
pub fn parse_recover(bytes: &[u8]) -> FlightLog {
    scan(bytes).log
}
