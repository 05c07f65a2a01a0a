//! CSV and KML renderings of a flight log.
//!
//! Numbers are formatted from the fixed-point integers directly, never via
//! floating point, so output is byte-identical on every platform and the
//! CSV re-scales back to the original integers exactly.

use std::fmt::Write as _;

use crate::flightlog::{FlightLog, Payload};

pub const CSV_HEADER: &str = "frame_index,timestamp_ms,record_type,lat_deg,lon_deg,alt_m,fix,num_sats,\
rpm1,rpm2,rpm3,rpm4,capacity_pct,voltage_mv,temp_c,pitch_deg,roll_deg,yaw_deg,event_code,event_message";

pub const KML_NAMESPACE: &str = "http://www.opengis.net/kml/2.2";

const COLUMNS: usize = 20;

/// Renders `value / 10^places` with exactly `places` decimals.
pub fn fixed_point(value: i64, places: u32) -> String {
    let scale = 10i64.pow(places);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let whole = abs / scale as u64;
    let frac = abs % scale as u64;
    if places == 0 {
        return format!("{sign}{whole}");
    }
    format!("{sign}{whole}.{frac:0width$}", width = places as usize)
}

/// RFC 4180 field quoting: only fields containing a comma, quote, CR or LF
/// are quoted, with embedded quotes doubled.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\r', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn to_csv(log: &FlightLog) -> Vec<u8> {
    let mut out = String::with_capacity(CSV_HEADER.len() + 1 + log.frames.len() * 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, frame) in log.frames.iter().enumerate() {
        let mut cols: [String; COLUMNS] = Default::default();
        cols[0] = i.to_string();
        cols[1] = frame.timestamp_ms.to_string();
        cols[2] = frame.record_type().name().to_owned();
        match &frame.payload {
            Payload::Gps(g) => {
                cols[3] = fixed_point(g.lat_e7.into(), 7);
                cols[4] = fixed_point(g.lon_e7.into(), 7);
                cols[5] = fixed_point(g.alt_mm.into(), 3);
                cols[6] = g.fix.to_string();
                cols[7] = g.num_sats.to_string();
            }
            Payload::Motor(m) => {
                for (c, rpm) in cols[8..12].iter_mut().zip(m.rpm) {
                    *c = rpm.to_string();
                }
            }
            Payload::Battery(b) => {
                cols[12] = b.capacity_pct.to_string();
                cols[13] = b.voltage_mv.to_string();
                cols[14] = fixed_point(b.temp_centi_c.into(), 2);
            }
            Payload::Attitude(a) => {
                cols[15] = fixed_point(a.pitch_cdeg.into(), 2);
                cols[16] = fixed_point(a.roll_cdeg.into(), 2);
                cols[17] = fixed_point(a.yaw_cdeg.into(), 2);
            }
            Payload::Event(e) => {
                cols[18] = e.code.to_string();
                cols[19] = csv_field(&e.message);
            }
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// One `lon,lat,alt` triple per GPS frame with a fix, in frame order.
pub fn kml_coordinates(log: &FlightLog) -> Vec<String> {
    log.frames
        .iter()
        .filter_map(|f| match &f.payload {
            Payload::Gps(g) if g.fix != 0 => Some(format!(
                "{},{},{}",
                fixed_point(g.lon_e7.into(), 7),
                fixed_point(g.lat_e7.into(), 7),
                fixed_point(g.alt_mm.into(), 3)
            )),
            _ => None,
        })
        .collect()
}

/// A KML document holding the flight path as one absolute-altitude
/// LineString, named after `source_name`.
pub fn to_kml(log: &FlightLog, source_name: &str) -> Vec<u8> {
    let name = xml_escape(source_name);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<kml xmlns=\"{KML_NAMESPACE}\">");
    out.push_str("  <Document>\n");
    let _ = writeln!(out, "    <name>{name}</name>");
    out.push_str("    <Placemark>\n");
    let _ = writeln!(out, "      <name>{name} flight path</name>");
    out.push_str("      <LineString>\n");
    out.push_str("        <altitudeMode>absolute</altitudeMode>\n");
    out.push_str("        <coordinates>");
    for c in kml_coordinates(log) {
        out.push_str("\n          ");
        out.push_str(&c);
    }
    out.push_str("\n        </coordinates>\n");
    out.push_str("      </LineString>\n");
    out.push_str("    </Placemark>\n");
    out.push_str("  </Document>\n");
    out.push_str("</kml>\n");
    out.into_bytes()
}
