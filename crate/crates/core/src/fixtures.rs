//! Deterministic synthetic inputs: flights, DATv1 logs, media files and
//! packed memory-card images. Every generator is a pure function of its
//! arguments.
//!
//! A packed card is a flat sequential layout, not a filesystem:
//!
//! ```text
//! offset 0  : "DTCARD1\n" { "name,offset,length\n" } "END\n", zero padded
//! then      : each file at a 4096-byte aligned offset
//! free space: 0xFF, as on erased flash
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flightlog::{
    generate, parse_strict, Attitude, BatteryState, DatHeader, FlightEvent, FlightFrame, GpsFix,
    MotorSpeeds, Payload, FOOTER_LEN, MAX_EVENT_MESSAGE,
};

pub const CARD_MAGIC: &[u8] = b"DTCARD1\n";
pub const CARD_TABLE_END: &[u8] = b"END\n";
pub const CARD_ALIGN: u64 = 4096;
pub const ERASED: u8 = 0xFF;
pub const MAX_RATE_HZ: u32 = 1000;
pub const MAX_RPM: u16 = 12_000;
/// Horizontal speed cap; with the climb cap this keeps 1 Hz fixes well
/// inside 25 m of each other.
pub const MAX_SPEED_M_S: f64 = 15.0;
pub const MAX_CLIMB_M_S: f64 = 3.0;

const METRES_PER_DEG_LAT: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("INVALID_PARAMS: {0}")]
    InvalidParams(String),
    #[error("CAPACITY_EXCEEDED: content needs {needed} bytes, card holds {available}")]
    CapacityExceeded { needed: u64, available: u64 },
    #[error("BAD_TABLE: {0}")]
    BadTable(String),
}

/// Frames per tick of [`synth_flight`]: GPS, MOTOR, BATTERY, ATTITUDE.
pub const FRAMES_PER_TICK: usize = 4;

/// A plausible flight: `duration_s * rate_hz` ticks, each emitting one GPS,
/// motor, battery and attitude frame at the same timestamp. The first two
/// GPS frames have no fix. Speed stays under [`MAX_SPEED_M_S`], battery
/// capacity never rises, rpm stays in `0..=12000` and yaw in ±180°.
pub fn synth_flight(
    seed: u64,
    duration_s: u32,
    rate_hz: u32,
) -> Result<Vec<FlightFrame>, FixtureError> {
    if rate_hz == 0 || rate_hz > MAX_RATE_HZ {
        return Err(FixtureError::InvalidParams(format!(
            "rate_hz must be in 1..={MAX_RATE_HZ}, got {rate_hz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ticks = u64::from(duration_s) * u64::from(rate_hz);
    let dt = 1.0 / f64::from(rate_hz);

    let mut lat: f64 = 51.5074 + rng.gen_range(-0.05..0.05);
    let mut lon: f64 = -0.1278 + rng.gen_range(-0.05..0.05);
    let lon_scale = METRES_PER_DEG_LAT * lat.to_radians().cos();
    let mut alt_m: f64 = rng.gen_range(0.0..20.0);
    let mut heading: f64 = rng.gen_range(-180.0..180.0);
    let mut speed: f64 = 0.0;
    let mut battery: u8 = rng.gen_range(90..=100);
    let temp_base: i16 = rng.gen_range(1500..3000);
    let start_ms: u64 = 1_481_400_000_000 + rng.gen_range(0..86_400_000);

    let mut frames = Vec::with_capacity(ticks as usize * FRAMES_PER_TICK);
    for tick in 0..ticks {
        let ts = start_ms + tick * 1000 / u64::from(rate_hz);
        if tick > 0 {
            speed = (speed + rng.gen_range(-1.5..1.5) * dt).clamp(0.0, MAX_SPEED_M_S * 0.98);
            heading += rng.gen_range(-20.0..20.0) * dt;
            if heading >= 180.0 {
                heading -= 360.0;
            } else if heading < -180.0 {
                heading += 360.0;
            }
            let dist = speed * dt;
            lat += dist * heading.to_radians().cos() / METRES_PER_DEG_LAT;
            lon += dist * heading.to_radians().sin() / lon_scale;
            alt_m = (alt_m + rng.gen_range(-MAX_CLIMB_M_S..MAX_CLIMB_M_S) * dt).clamp(0.0, 120.0);
            if battery > 5 && rng.gen_bool((0.02 * dt).min(1.0)) {
                battery -= 1;
            }
        }
        let fix = if tick < 2 { 0 } else { 3 };
        frames.push(FlightFrame::new(
            ts,
            Payload::Gps(GpsFix {
                lat_e7: (lat * 1e7).round() as i32,
                lon_e7: (lon * 1e7).round() as i32,
                alt_mm: (alt_m * 1000.0).round() as i32,
                fix,
                num_sats: if fix == 0 {
                    rng.gen_range(0..4)
                } else {
                    rng.gen_range(6..15)
                },
            }),
        ));
        let airborne = tick > 0;
        let mut rpm = [0u16; 4];
        if airborne {
            for r in &mut rpm {
                *r = rng
                    .gen_range(3000..=9000 + (speed * 150.0) as u16)
                    .min(MAX_RPM);
            }
        }
        frames.push(FlightFrame::new(ts, Payload::Motor(MotorSpeeds { rpm })));
        frames.push(FlightFrame::new(
            ts,
            Payload::Battery(BatteryState {
                capacity_pct: battery,
                voltage_mv: 13_200 + u16::from(battery) * 20,
                temp_centi_c: temp_base + rng.gen_range(-50..50),
            }),
        ));
        let yaw = (heading * 100.0).round().clamp(-18_000.0, 17_999.0) as i16;
        frames.push(FlightFrame::new(
            ts,
            Payload::Attitude(Attitude {
                pitch_cdeg: rng.gen_range(-1500..=1500),
                roll_cdeg: rng.gen_range(-1500..=1500),
                yaw_cdeg: yaw,
            }),
        ));
    }
    Ok(frames)
}

/// Arbitrary valid frames of every record type, including extreme values and
/// event messages that need CSV quoting. Timestamps are non-decreasing.
pub fn random_frames(seed: u64, count: usize) -> Vec<FlightFrame> {
    const WORDS: [&str; 8] = [
        "motor",
        "warning",
        "GPS lost",
        "a,b",
        "say \"hi\"",
        "line\nbreak",
        "é ünïcode",
        "",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: u64 = rng.gen_range(0..1u64 << 40);
    (0..count)
        .map(|_| {
            ts += rng.gen_range(0..500);
            let payload = match rng.gen_range(0..5) {
                0 => {
                    let fix = rng.gen_range(0..=3u8);
                    Payload::Gps(GpsFix {
                        lat_e7: rng.gen_range(-900_000_000..=900_000_000),
                        lon_e7: rng.gen_range(-1_800_000_000..=1_800_000_000),
                        alt_mm: rng.gen(),
                        fix,
                        num_sats: rng.gen(),
                    })
                }
                1 => Payload::Motor(MotorSpeeds { rpm: rng.gen() }),
                2 => Payload::Battery(BatteryState {
                    capacity_pct: rng.gen_range(0..=100),
                    voltage_mv: rng.gen(),
                    temp_centi_c: rng.gen(),
                }),
                3 => Payload::Attitude(Attitude {
                    pitch_cdeg: rng.gen(),
                    roll_cdeg: rng.gen(),
                    yaw_cdeg: rng.gen(),
                }),
                _ => {
                    let mut message = String::new();
                    for _ in 0..rng.gen_range(0..6) {
                        let w = WORDS[rng.gen_range(0..WORDS.len())];
                        if message.len() + w.len() < MAX_EVENT_MESSAGE {
                            message.push_str(w);
                            message.push(' ');
                        }
                    }
                    Payload::Event(FlightEvent {
                        code: rng.gen(),
                        message,
                    })
                }
            };
            FlightFrame::new(ts, payload)
        })
        .collect()
}

/// A device header derived from `seed`.
pub fn synth_header(seed: u64) -> DatHeader {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DA7A);
    DatHeader::new(rng.gen(), 1_481_400_000_000 + rng.gen_range(0..86_400_000))
}

fn media_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    // No 0xFF (so no JPEG markers), no 0x89 (PNG magic) and no 'f' (`ftyp`).
    (0..len)
        .map(|_| match rng.gen::<u8>() {
            0xFF => 0xFE,
            0x89 => 0x88,
            b'f' => b'g',
            b => b,
        })
        .collect()
}

/// A structurally plausible baseline JPEG: SOI, APP0/JFIF, SOS and
/// byte-stuffed entropy data, EOI. No marker pattern appears inside.
pub fn synth_jpeg(seed: u64, entropy_len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0xFF, 0xD8];
    out.extend_from_slice(&[0xFF, 0xE0, 0x00, 0x10]);
    out.extend_from_slice(b"JFIF\0");
    out.extend_from_slice(&[0x01, 0x01, 0x00, 0x00, 0x48, 0x00, 0x48, 0x00, 0x00]);
    out.extend_from_slice(&[0xFF, 0xDA, 0x00, 0x08, 0x01, 0x01, 0x00, 0x00, 0x3F, 0x00]);
    for _ in 0..entropy_len {
        let b: u8 = rng.gen();
        if b == 0xFF {
            out.extend_from_slice(&[0xFF, 0x00]);
        } else if b == 0x89 || b == b'f' {
            out.push(b + 1);
        } else {
            out.push(b);
        }
    }
    out.extend_from_slice(&[0xFF, 0xD9]);
    out
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

/// A PNG with valid chunk framing and CRCs: IHDR, one IDAT, IEND.
pub fn synth_png(seed: u64, width: u32, height: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&width.to_be_bytes());
    ihdr.extend_from_slice(&height.to_be_bytes());
    ihdr.extend_from_slice(&[8, 0, 0, 0, 0]);
    png_chunk(&mut out, b"IHDR", &ihdr);
    let data = media_bytes(&mut rng, (width * height) as usize);
    png_chunk(&mut out, b"IDAT", &data);
    png_chunk(&mut out, b"IEND", &[]);
    out
}

/// An ISO-BMFF file of three boxes: `ftyp`, `free` and `mdat`.
pub fn synth_mp4(seed: u64, mdat_len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut bx = |kind: &[u8; 4], body: &[u8]| {
        out.extend_from_slice(&((body.len() + 8) as u32).to_be_bytes());
        out.extend_from_slice(kind);
        out.extend_from_slice(body);
    };
    bx(b"ftyp", b"isom\x00\x00\x02\x00isomiso2avc1mp41");
    bx(b"free", &[0; 8]);
    bx(b"mdat", &media_bytes(&mut rng, mdat_len));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCard {
    pub image: Vec<u8>,
    pub layout: Vec<LayoutEntry>,
}

impl PackedCard {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        let e = self.layout.iter().find(|e| e.name == name)?;
        self.image
            .get(e.offset as usize..(e.offset + e.length) as usize)
    }
}

/// `name,offset,length` per line.
pub fn layout_manifest(layout: &[LayoutEntry]) -> String {
    layout
        .iter()
        .map(|e| format!("{},{},{}\n", e.name, e.offset, e.length))
        .collect()
}

fn align_up(n: u64) -> u64 {
    n.div_ceil(CARD_ALIGN) * CARD_ALIGN
}

fn table_bytes(layout: &[LayoutEntry]) -> Vec<u8> {
    let mut out = CARD_MAGIC.to_vec();
    out.extend_from_slice(layout_manifest(layout).as_bytes());
    out.extend_from_slice(CARD_TABLE_END);
    out
}

/// Lays `logs` then `media` out sequentially on a card of `size_bytes`.
/// With `unclosed_last` the final log loses its footer; its slot keeps the
/// closed length so the footer can later be written back in place.
pub fn pack_card(
    logs: &[(String, Vec<u8>)],
    media: &[(String, Vec<u8>)],
    size_bytes: u64,
    unclosed_last: bool,
) -> Result<PackedCard, FixtureError> {
    let files: Vec<&(String, Vec<u8>)> = logs.iter().chain(media).collect();
    for (name, _) in &files {
        if name.is_empty() || name.contains([',', '\n', '\r']) || name == "END" {
            return Err(FixtureError::InvalidParams(format!(
                "unusable file name {name:?}"
            )));
        }
    }
    if unclosed_last {
        match logs.last() {
            Some((name, bytes)) if parse_strict(bytes).is_err() => {
                return Err(FixtureError::InvalidParams(format!(
                    "{name} is not a closed log"
                )))
            }
            None => {
                return Err(FixtureError::InvalidParams(
                    "unclosed_last needs a log".into(),
                ))
            }
            _ => {}
        }
    }

    // Reserve room for the table assuming 20-digit numbers.
    let table_max = CARD_MAGIC.len()
        + CARD_TABLE_END.len()
        + files.iter().map(|(n, _)| n.len() + 43).sum::<usize>();
    let mut cursor = align_up(table_max.max(1) as u64);
    let mut layout = Vec::with_capacity(files.len());
    for (i, (name, bytes)) in files.iter().enumerate() {
        let stripped = unclosed_last && i + 1 == logs.len();
        let length = bytes.len() as u64 - if stripped { FOOTER_LEN as u64 } else { 0 };
        layout.push(LayoutEntry {
            name: name.clone(),
            offset: cursor,
            length,
        });
        cursor = align_up(cursor + bytes.len() as u64);
    }
    let needed = layout
        .iter()
        .zip(&files)
        .map(|(e, (_, b))| e.offset + b.len() as u64)
        .max()
        .unwrap_or(align_up(table_max as u64))
        .max(table_max as u64);
    if needed > size_bytes {
        return Err(FixtureError::CapacityExceeded {
            needed,
            available: size_bytes,
        });
    }
    let size = usize::try_from(size_bytes)
        .map_err(|_| FixtureError::InvalidParams("card size exceeds address space".into()))?;

    let mut image = vec![ERASED; size];
    let table = table_bytes(&layout);
    let table_region = align_up(table_max as u64).min(size_bytes) as usize;
    image[..table_region].fill(0);
    image[..table.len()].copy_from_slice(&table);
    for (e, (_, bytes)) in layout.iter().zip(&files) {
        let start = e.offset as usize;
        image[start..start + e.length as usize].copy_from_slice(&bytes[..e.length as usize]);
    }
    Ok(PackedCard { image, layout })
}

/// Parses the allocation table at the start of a packed card.
pub fn read_layout(image: &[u8]) -> Result<Vec<LayoutEntry>, FixtureError> {
    let bad = |m: &str| FixtureError::BadTable(m.to_owned());
    if !image.starts_with(CARD_MAGIC) {
        return Err(bad("missing DTCARD1 magic"));
    }
    let mut layout = Vec::new();
    let mut pos = CARD_MAGIC.len();
    loop {
        let nl = image[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated table"))?;
        let line =
            std::str::from_utf8(&image[pos..pos + nl]).map_err(|_| bad("table is not UTF-8"))?;
        pos += nl + 1;
        if line == "END" {
            return Ok(layout);
        }
        let mut parts = line.rsplitn(3, ',');
        let (Some(len), Some(off), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(&format!("bad table line {line:?}")));
        };
        let entry = LayoutEntry {
            name: name.to_owned(),
            offset: off
                .parse()
                .map_err(|_| bad(&format!("bad offset in {line:?}")))?,
            length: len
                .parse()
                .map_err(|_| bad(&format!("bad length in {line:?}")))?,
        };
        if entry
            .offset
            .checked_add(entry.length)
            .is_none_or(|end| end > image.len() as u64)
        {
            return Err(bad(&format!("{} lies outside the card", entry.name)));
        }
        layout.push(entry);
    }
}

/// The desk-scale reproduction of the seized card: ten logs FLY095 to
/// FLY104 with the last left unclosed, three JPEG photographs, 64 MiB.
#[derive(Debug, Clone)]
pub struct CaseStudyCard {
    pub card: PackedCard,
    /// Frames of each log, in log order.
    pub flights: Vec<(String, Vec<FlightFrame>)>,
    pub jpegs: Vec<(String, Vec<u8>)>,
}

pub const CASE_STUDY_CARD_BYTES: u64 = 64 * 1024 * 1024;
pub const CASE_STUDY_FIRST_LOG: u32 = 95;
pub const CASE_STUDY_LOGS: u32 = 10;

pub fn case_study_card(seed: u64) -> Result<CaseStudyCard, FixtureError> {
    let mut flights = Vec::new();
    let mut logs = Vec::new();
    for i in 0..CASE_STUDY_LOGS {
        let name = crate::flightlog::log_file_name(CASE_STUDY_FIRST_LOG + i);
        let s = seed.wrapping_mul(1000).wrapping_add(u64::from(i));
        let frames = synth_flight(s, 60 + 20 * i, 5)?;
        let bytes = generate(&synth_header(s), &frames, true)
            .map_err(|e| FixtureError::InvalidParams(e.to_string()))?;
        logs.push((name.clone(), bytes));
        flights.push((name, frames));
    }
    let jpegs: Vec<(String, Vec<u8>)> = (0..3u64)
        .map(|i| {
            (
                format!("DJI_{:04}.JPG", i + 1),
                synth_jpeg(seed ^ (i + 7), 20_000 + 7_000 * i as usize),
            )
        })
        .collect();
    let card = pack_card(&logs, &jpegs, CASE_STUDY_CARD_BYTES, true)?;
    Ok(CaseStudyCard {
        card,
        flights,
        jpegs,
    })
}
