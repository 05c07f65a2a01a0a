use serde::{Deserialize, Serialize};

use super::{FlightLog, Payload, RecordType};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub gps: u64,
    pub motor: u64,
    pub battery: u64,
    pub attitude: u64,
    pub event: u64,
}

impl FrameCounts {
    pub fn get(&self, record_type: RecordType) -> u64 {
        match record_type {
            RecordType::Gps => self.gps,
            RecordType::Motor => self.motor,
            RecordType::Battery => self.battery,
            RecordType::Attitude => self.attitude,
            RecordType::Event => self.event,
        }
    }

    fn bump(&mut self, record_type: RecordType) {
        match record_type {
            RecordType::Gps => self.gps += 1,
            RecordType::Motor => self.motor += 1,
            RecordType::Battery => self.battery += 1,
            RecordType::Attitude => self.attitude += 1,
            RecordType::Event => self.event += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.gps + self.motor + self.battery + self.attitude + self.event
    }
}

/// Decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSummary {
    pub duration_ms: u64,
    pub frame_counts: FrameCounts,
    pub gps_fix_count: u64,
    /// Present only when at least one GPS frame has a fix.
    pub bounding_box: Option<BoundingBox>,
    pub max_alt_m: Option<f64>,
    pub battery_start_pct: Option<u8>,
    pub battery_end_pct: Option<u8>,
    pub max_motor_rpm: Option<u16>,
}

/// Aggregates a log. GPS frames without a fix are counted but contribute
/// nothing to the bounding box or altitude. Duration is last minus first
/// timestamp in frame order, saturating at zero.
pub fn summarize(log: &FlightLog) -> FlightSummary {
    let duration_ms = match (log.frames.first(), log.frames.last()) {
        (Some(first), Some(last)) => last.timestamp_ms.saturating_sub(first.timestamp_ms),
        _ => 0,
    };
    let mut counts = FrameCounts::default();
    let mut gps_fix_count = 0;
    let mut bbox: Option<(i32, i32, i32, i32)> = None;
    let mut max_alt_mm: Option<i32> = None;
    let mut battery_start = None;
    let mut battery_end = None;
    let mut max_rpm: Option<u16> = None;

    for frame in &log.frames {
        counts.bump(frame.record_type());
        match &frame.payload {
            Payload::Gps(g) if g.fix != 0 => {
                gps_fix_count += 1;
                bbox = Some(match bbox {
                    None => (g.lat_e7, g.lat_e7, g.lon_e7, g.lon_e7),
                    Some((a, b, c, d)) => (
                        a.min(g.lat_e7),
                        b.max(g.lat_e7),
                        c.min(g.lon_e7),
                        d.max(g.lon_e7),
                    ),
                });
                max_alt_mm = Some(max_alt_mm.map_or(g.alt_mm, |m| m.max(g.alt_mm)));
            }
            Payload::Battery(b) => {
                battery_start.get_or_insert(b.capacity_pct);
                battery_end = Some(b.capacity_pct);
            }
            Payload::Motor(m) => {
                let top = m.rpm.iter().copied().max().unwrap_or(0);
                max_rpm = Some(max_rpm.map_or(top, |r| r.max(top)));
            }
            _ => {}
        }
    }

    let deg = |e7: i32| e7 as f64 / 1e7;
    FlightSummary {
        duration_ms,
        frame_counts: counts,
        gps_fix_count,
        bounding_box: bbox.map(|(min_lat, max_lat, min_lon, max_lon)| BoundingBox {
            min_lat: deg(min_lat),
            max_lat: deg(max_lat),
            min_lon: deg(min_lon),
            max_lon: deg(max_lon),
        }),
        max_alt_m: max_alt_mm.map(|mm| mm as f64 / 1000.0),
        battery_start_pct: battery_start,
        battery_end_pct: battery_end,
        max_motor_rpm: max_rpm,
    }
}
