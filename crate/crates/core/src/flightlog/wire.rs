use thiserror::Error;

use super::{
    Attitude, BatteryState, DatHeader, FlightEvent, FlightFrame, GpsFix, MotorSpeeds, Payload,
    RecordType, FOOTER_LEN, FOOTER_SYNC, FRAME_OVERHEAD, FRAME_SYNC, HEADER_LEN, MAGIC,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("INVALID_FRAME at index {index}: {reason}")]
    InvalidFrame { index: usize, reason: String },
}

pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub(crate) fn encode_header(header: &DatHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&MAGIC);
    out[4..6].copy_from_slice(&header.version.to_le_bytes());
    out[6..22].copy_from_slice(&header.device_id);
    out[22..30].copy_from_slice(&header.created_at_ms.to_le_bytes());
    out
}

/// Magic must already have been checked.
pub(crate) fn decode_header(bytes: &[u8; HEADER_LEN]) -> DatHeader {
    let mut device_id = [0u8; 16];
    device_id.copy_from_slice(&bytes[6..22]);
    DatHeader {
        version: u16::from_le_bytes([bytes[4], bytes[5]]),
        device_id,
        created_at_ms: u64::from_le_bytes(bytes[22..30].try_into().unwrap()),
    }
}

fn encode_payload(frame: &FlightFrame, out: &mut Vec<u8>) {
    out.extend_from_slice(&frame.timestamp_ms.to_le_bytes());
    match &frame.payload {
        Payload::Gps(g) => {
            out.extend_from_slice(&g.lat_e7.to_le_bytes());
            out.extend_from_slice(&g.lon_e7.to_le_bytes());
            out.extend_from_slice(&g.alt_mm.to_le_bytes());
            out.push(g.fix);
            out.push(g.num_sats);
        }
        Payload::Motor(m) => {
            for rpm in m.rpm {
                out.extend_from_slice(&rpm.to_le_bytes());
            }
        }
        Payload::Battery(b) => {
            out.push(b.capacity_pct);
            out.extend_from_slice(&b.voltage_mv.to_le_bytes());
            out.extend_from_slice(&b.temp_centi_c.to_le_bytes());
        }
        Payload::Attitude(a) => {
            out.extend_from_slice(&a.pitch_cdeg.to_le_bytes());
            out.extend_from_slice(&a.roll_cdeg.to_le_bytes());
            out.extend_from_slice(&a.yaw_cdeg.to_le_bytes());
        }
        Payload::Event(e) => {
            out.push(e.code);
            out.push(e.message.len() as u8);
            out.extend_from_slice(e.message.as_bytes());
        }
    }
}

/// Encodes one frame including sync byte and CRC. The frame must already
/// satisfy [`FlightFrame::validate`].
pub fn encode_frame(frame: &FlightFrame) -> Vec<u8> {
    let mut payload = Vec::with_capacity(32);
    encode_payload(frame, &mut payload);
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.push(FRAME_SYNC);
    out.push(frame.record_type() as u8);
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn encode_footer(frame_count: u32, file_crc: u32) -> [u8; FOOTER_LEN] {
    let mut out = [0u8; FOOTER_LEN];
    out[0] = FOOTER_SYNC;
    out[1..5].copy_from_slice(&frame_count.to_le_bytes());
    out[5..9].copy_from_slice(&file_crc.to_le_bytes());
    out
}

/// Appends the footer for everything currently in `body`.
pub(crate) fn close(body: &mut Vec<u8>, frame_count: u32) {
    let crc = crc32(body);
    body.extend_from_slice(&encode_footer(frame_count, crc));
}

/// Deterministic DATv1 encoding of `frames`. With `closed = false` the
/// footer is omitted, which is what an interrupted recorder leaves behind.
pub fn generate(
    header: &DatHeader,
    frames: &[FlightFrame],
    closed: bool,
) -> Result<Vec<u8>, EncodeError> {
    for (index, frame) in frames.iter().enumerate() {
        frame
            .validate()
            .map_err(|reason| EncodeError::InvalidFrame { index, reason })?;
    }
    if frames.len() > u32::MAX as usize {
        return Err(EncodeError::InvalidFrame {
            index: u32::MAX as usize,
            reason: "frame count exceeds u32".into(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 32 + FOOTER_LEN);
    out.extend_from_slice(&encode_header(header));
    for frame in frames {
        out.extend_from_slice(&encode_frame(frame));
    }
    if closed {
        close(&mut out, frames.len() as u32);
    }
    Ok(out)
}

#[derive(Debug)]
pub(crate) enum FrameFault {
    /// Not enough bytes left for the declared frame.
    Truncated,
    CrcMismatch,
    Malformed(String),
}

/// Decodes the frame starting at `bytes[0]` (which must be the sync byte).
/// Returns the frame and its encoded length.
pub(crate) fn decode_frame(bytes: &[u8]) -> Result<(FlightFrame, usize), FrameFault> {
    debug_assert_eq!(bytes.first(), Some(&FRAME_SYNC));
    if bytes.len() < 4 {
        return Err(FrameFault::Truncated);
    }
    let payload_len = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    let total = payload_len + FRAME_OVERHEAD;
    if bytes.len() < total {
        return Err(FrameFault::Truncated);
    }
    let body = &bytes[1..4 + payload_len];
    let stored = u32::from_le_bytes(bytes[4 + payload_len..total].try_into().unwrap());
    if crc32(body) != stored {
        return Err(FrameFault::CrcMismatch);
    }
    let frame =
        decode_payload(bytes[1], &bytes[4..4 + payload_len]).map_err(FrameFault::Malformed)?;
    frame.validate().map_err(FrameFault::Malformed)?;
    Ok((frame, total))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn i16(&mut self) -> i16 {
        i16::from_le_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

fn decode_payload(type_code: u8, payload: &[u8]) -> Result<FlightFrame, String> {
    let record_type = RecordType::from_code(type_code)
        .ok_or_else(|| format!("unknown record type 0x{type_code:02X}"))?;
    let expected = match record_type {
        RecordType::Gps => Some(22),
        RecordType::Motor => Some(16),
        RecordType::Battery => Some(13),
        RecordType::Attitude => Some(14),
        RecordType::Event => None,
    };
    match expected {
        Some(n) if payload.len() != n => {
            return Err(format!(
                "{} payload is {} bytes, expected {n}",
                record_type.name(),
                payload.len()
            ))
        }
        None if payload.len() < 10 => {
            return Err(format!(
                "EVENT payload is {} bytes, minimum 10",
                payload.len()
            ))
        }
        _ => {}
    }
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let timestamp_ms = c.u64();
    let payload = match record_type {
        RecordType::Gps => Payload::Gps(GpsFix {
            lat_e7: c.i32(),
            lon_e7: c.i32(),
            alt_mm: c.i32(),
            fix: c.u8(),
            num_sats: c.u8(),
        }),
        RecordType::Motor => Payload::Motor(MotorSpeeds {
            rpm: [c.u16(), c.u16(), c.u16(), c.u16()],
        }),
        RecordType::Battery => Payload::Battery(BatteryState {
            capacity_pct: c.u8(),
            voltage_mv: c.u16(),
            temp_centi_c: c.i16(),
        }),
        RecordType::Attitude => Payload::Attitude(Attitude {
            pitch_cdeg: c.i16(),
            roll_cdeg: c.i16(),
            yaw_cdeg: c.i16(),
        }),
        RecordType::Event => {
            let code = c.u8();
            let len = c.u8() as usize;
            let rest = &payload[c.pos..];
            if rest.len() != len {
                return Err(format!(
                    "EVENT message length {len} disagrees with {} remaining bytes",
                    rest.len()
                ));
            }
            let message = std::str::from_utf8(rest)
                .map_err(|e| format!("EVENT message is not UTF-8: {e}"))?
                .to_owned();
            Payload::Event(FlightEvent { code, message })
        }
    };
    Ok(FlightFrame {
        timestamp_ms,
        payload,
    })
}
