//! DATv1 flight logs.
//!
//! A DATv1 file is a 30-byte header followed by CRC-protected telemetry
//! frames and, once the recorder closes the file, a 9-byte footer. All
//! multi-byte integers are little-endian.
//!
//! ```text
//! header : "DTV1" | version u16 | device_id [16] | created_at_ms u64
//! frame  : 0xAA | record_type u8 | payload_len u16 | payload | crc32 u32
//! footer : 0x55 | frame_count u32 | file_crc32 u32
//! ```
//!
//! The frame CRC covers `record_type`, `payload_len` and `payload`. The file
//! CRC covers every byte from offset 0 through the last byte of the last
//! frame. A recorder that loses power before it opens the next log leaves the
//! footer off; [`parse_strict`] reports that as [`ParseError::MissingFooter`]
//! and [`parse_recover`] salvages every intact frame regardless.

mod finalize;
mod parse;
mod summary;
mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use finalize::{finalize_log, FinalizeError};
pub use parse::{parse_recover, parse_strict};
pub use summary::{summarize, BoundingBox, FlightSummary, FrameCounts};
pub use wire::{encode_frame, generate, EncodeError};

pub const MAGIC: [u8; 4] = *b"DTV1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 30;
pub const FOOTER_LEN: usize = 9;
pub const FRAME_SYNC: u8 = 0xAA;
pub const FOOTER_SYNC: u8 = 0x55;
/// Sync, record type, payload length and CRC around each payload.
pub const FRAME_OVERHEAD: usize = 8;
pub const MAX_EVENT_MESSAGE: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatHeader {
    pub version: u16,
    pub device_id: [u8; 16],
    pub created_at_ms: u64,
}

impl DatHeader {
    pub fn new(device_id: [u8; 16], created_at_ms: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            device_id,
            created_at_ms,
        }
    }

    /// Stand-in used by recovery when the file has no usable header.
    pub fn placeholder() -> Self {
        Self::new([0; 16], 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum RecordType {
    Gps = 0x01,
    Motor = 0x02,
    Battery = 0x03,
    Attitude = 0x04,
    Event = 0x05,
}

impl RecordType {
    pub const ALL: [RecordType; 5] = [
        RecordType::Gps,
        RecordType::Motor,
        RecordType::Battery,
        RecordType::Attitude,
        RecordType::Event,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordType::Gps => "GPS",
            RecordType::Motor => "MOTOR",
            RecordType::Battery => "BATTERY",
            RecordType::Attitude => "ATTITUDE",
            RecordType::Event => "EVENT",
        }
    }
}

/// Position in fixed point: degrees × 10^7 and millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub alt_mm: i32,
    /// 0 means no fix; coordinates are then meaningless.
    pub fix: u8,
    pub num_sats: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorSpeeds {
    pub rpm: [u16; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatteryState {
    pub capacity_pct: u8,
    pub voltage_mv: u16,
    pub temp_centi_c: i16,
}

/// Centi-degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attitude {
    pub pitch_cdeg: i16,
    pub roll_cdeg: i16,
    pub yaw_cdeg: i16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightEvent {
    pub code: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Gps(GpsFix),
    Motor(MotorSpeeds),
    Battery(BatteryState),
    Attitude(Attitude),
    Event(FlightEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightFrame {
    pub timestamp_ms: u64,
    pub payload: Payload,
}

impl FlightFrame {
    pub fn new(timestamp_ms: u64, payload: Payload) -> Self {
        Self {
            timestamp_ms,
            payload,
        }
    }

    pub fn record_type(&self) -> RecordType {
        match self.payload {
            Payload::Gps(_) => RecordType::Gps,
            Payload::Motor(_) => RecordType::Motor,
            Payload::Battery(_) => RecordType::Battery,
            Payload::Attitude(_) => RecordType::Attitude,
            Payload::Event(_) => RecordType::Event,
        }
    }

    /// Checks the value-range invariants the wire format cannot express.
    pub fn validate(&self) -> Result<(), String> {
        match &self.payload {
            Payload::Gps(g) if g.fix != 0 => {
                if g.lat_e7.unsigned_abs() > 900_000_000 {
                    return Err(format!("latitude {} out of range", g.lat_e7));
                }
                if g.lon_e7.unsigned_abs() > 1_800_000_000 {
                    return Err(format!("longitude {} out of range", g.lon_e7));
                }
                Ok(())
            }
            Payload::Battery(b) if b.capacity_pct > 100 => {
                Err(format!("capacity {}% exceeds 100", b.capacity_pct))
            }
            Payload::Event(e) if e.message.len() > MAX_EVENT_MESSAGE => Err(format!(
                "event message is {} bytes, limit {MAX_EVENT_MESSAGE}",
                e.message.len()
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Bytes belonging to the header, accepted frames and any valid footer.
    pub bytes_consumed: u64,
    pub bytes_total: u64,
    pub frames_recovered: u64,
    /// Maximal runs of bytes that could not be attributed to a valid
    /// structure. A torn final frame counts as one.
    pub frames_dropped: u64,
    /// The input ends inside an unattributable run.
    pub trailing_garbage: bool,
    /// No valid header was found; [`DatHeader::placeholder`] was used.
    pub header_synthesized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightLog {
    pub header: DatHeader,
    pub frames: Vec<FlightFrame>,
    /// Footer present, valid, and nothing else wrong with the file.
    pub closed: bool,
    pub recovery: Option<RecoveryReport>,
    /// Indices of frames whose timestamp is earlier than the previous frame's.
    pub timestamp_regressions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("BAD_MAGIC: file does not start with \"DTV1\"")]
    BadMagic,
    #[error("BAD_VERSION: unsupported format version {found}")]
    BadVersion { found: u16 },
    #[error("FRAME_CRC_MISMATCH at offset {offset}")]
    FrameCrcMismatch { offset: u64 },
    #[error("MALFORMED_FRAME at offset {offset}: {reason}")]
    MalformedFrame { offset: u64, reason: String },
    #[error("BAD_SYNC at offset {offset}: expected frame or footer, found 0x{found:02X}")]
    BadSync { offset: u64, found: u8 },
    #[error("MISSING_FOOTER: log ends after {frames} frames at offset {offset} without a footer")]
    MissingFooter { offset: u64, frames: u64 },
    #[error("FOOTER_MISMATCH at offset {offset}: {reason}")]
    FooterMismatch { offset: u64, reason: String },
    #[error("TRUNCATED at offset {offset}")]
    Truncated { offset: u64 },
}

impl ParseError {
    /// Stable upper-case code, as printed at the start of the message.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::BadMagic => "BAD_MAGIC",
            ParseError::BadVersion { .. } => "BAD_VERSION",
            ParseError::FrameCrcMismatch { .. } => "FRAME_CRC_MISMATCH",
            ParseError::MalformedFrame { .. } => "MALFORMED_FRAME",
            ParseError::BadSync { .. } => "BAD_SYNC",
            ParseError::MissingFooter { .. } => "MISSING_FOOTER",
            ParseError::FooterMismatch { .. } => "FOOTER_MISMATCH",
            ParseError::Truncated { .. } => "TRUNCATED",
        }
    }
}

/// `FLY<nnn>.DAT`, the recorder's naming convention.
pub fn log_file_name(sequence: u32) -> String {
    format!("FLY{sequence:03}.DAT")
}

pub(crate) fn timestamp_regressions(frames: &[FlightFrame]) -> Vec<usize> {
    frames
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].timestamp_ms < w[0].timestamp_ms)
        .map(|(i, _)| i + 1)
        .collect()
}
