//! Property tests for the cross-module invariants.

use std::collections::BTreeSet;
use std::fs;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

use dronetrace::carving::{self, Signature};
use dronetrace::casefile::{
    self as cf, stage_of, verify_records, CaseFile, CustodyAction, CustodyEvent, Exhibit,
    ExhibitKind, LedgerStatus, Stage, StepStatus,
};
use dronetrace::export;
use dronetrace::fixtures::{self, random_frames, synth_header, FRAMES_PER_TICK};
use dronetrace::flightlog::{
    finalize_log, generate, parse_recover, parse_strict, FinalizeError, Payload, HEADER_LEN,
};
use dronetrace::imaging::{self, HashManifest, StorageImage};

fn t(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_481_400_000 + secs, 0).unwrap()
}

fn case_with(exhibits: &[&str]) -> CaseFile {
    let mut case = CaseFile::new("CASE-P", "A. Examiner", t(0)).unwrap();
    for id in exhibits {
        case.add_exhibit(Exhibit::new(id, ExhibitKind::Uav))
            .unwrap();
    }
    case
}

fn event(actor: String, action: usize, note: String, at: i64) -> CustodyEvent {
    CustodyEvent {
        actor,
        action: CustodyAction::ALL[action % CustodyAction::ALL.len()],
        exhibit_id: "EX-1".into(),
        occurred_at: t(at),
        note,
    }
}

fn clone_stub() -> StorageImage {
    StorageImage {
        image_path: "clone.img".into(),
        size_bytes: 0,
        manifest: HashManifest::empty(DateTime::UNIX_EPOCH),
        source_description: String::new(),
        read_only: false,
        is_clone: true,
        parent_image: Some("original.img".into()),
    }
}

const STATUSES: [StepStatus; 5] = [
    StepStatus::Pending,
    StepStatus::InProgress,
    StepStatus::Done,
    StepStatus::Failed,
    StepStatus::NotApplicable,
];

#[test]
fn stage_partition_is_exact() {
    let mut seen = BTreeSet::new();
    for stage in Stage::ALL {
        for step in stage.steps() {
            assert!(seen.insert(step), "step {step} in two stages");
            assert_eq!(stage_of(step), Some(stage));
        }
    }
    assert_eq!(seen, (1..=20).collect());
    assert_eq!(Stage::Preparation.steps(), 1..=6);
    assert_eq!(Stage::Examination.steps(), 7..=17);
    assert_eq!(Stage::AnalysisAndReport.steps(), 18..=20);
    assert_eq!(stage_of(0), None);
    assert_eq!(stage_of(21), None);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn ledger_mutation_is_caught_at_or_before_the_entry(
        events in prop::collection::vec(("[a-zA-Z][a-zA-Z .]{0,11}", 0usize..8, "[ -~]{0,20}"), 1..20),
        pick in any::<prop::sample::Index>(),
        byte in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let mut case = case_with(&["EX-1"]);
        for (i, (actor, action, note)) in events.into_iter().enumerate() {
            case.append_custody(event(actor, action, note, i as i64)).unwrap();
        }
        let mut records = case.ledger_records();
        prop_assert_eq!(verify_records(&records), LedgerStatus::Ok);
        let i = pick.index(records.len());
        let at = byte.index(records[i].len());
        records[i][at] ^= flip;
        match verify_records(&records) {
            LedgerStatus::Tampered { sequence } => prop_assert!(sequence as usize <= i),
            LedgerStatus::Ok => prop_assert!(false, "mutation of entry {} byte {} undetected", i, at),
        }
    }

    #[test]
    fn ledger_is_append_only(
        ops in prop::collection::vec((0u8..4, 0u8..21, 0usize..5, 0i64..3), 1..60),
    ) {
        let mut case = case_with(&["EX-1", "EX-2"]);
        let mut snapshots: Vec<Vec<Vec<u8>>> = vec![case.ledger_records()];
        let mut clock = 0i64;
        for (kind, step, status, dt) in ops {
            // Occasionally step backwards in time to exercise TIME_REGRESSION.
            clock = if dt == 0 { clock - 5 } else { clock + dt };
            let _ = match kind {
                0 => case.append_custody(event("PC 1".into(), status, String::new(), clock)).map(|_| ()),
                1 => case.record_step("EX-1", step, STATUSES[status], "", "n/a", t(clock)).map(|_| ()),
                2 => case.record_step("EX-2", step, STATUSES[status], "", "", t(clock)).map(|_| ()),
                _ => case.add_exhibit(Exhibit::new(&format!("EX-{step}"), ExhibitKind::Other)).map(|_| ()),
            };
            let now = case.ledger_records();
            let k = snapshots.last().unwrap().len();
            prop_assert!(now.len() >= k);
            snapshots.push(now);
        }
        let last = snapshots.last().unwrap();
        for snap in &snapshots {
            prop_assert_eq!(&last[..snap.len()], &snap[..]);
        }
        prop_assert!(case.verify_ledger().is_ok());
    }

    #[test]
    fn destructive_step_never_starts_early(
        ops in prop::collection::vec((11u8..=17, 0usize..5), 0..80),
    ) {
        let mut case = case_with(&["EX-1"]);
        for (i, (step, status)) in ops.into_iter().enumerate() {
            let before: Vec<StepStatus> = (11..=15)
                .map(|s| case.step("EX-1", s).map_or(StepStatus::Pending, |r| r.status))
                .collect();
            let result = case.record_step("EX-1", step, STATUSES[status], "", "n/a", t(i as i64));
            if step == 17 && STATUSES[status] == StepStatus::InProgress && result.is_ok() {
                prop_assert!(before.iter().all(|s| s.is_terminal()), "step 17 started with {:?}", before);
            }
            let gate = case.check_gate("EX-1", 17).unwrap();
            prop_assert_eq!(gate.allowed, gate.blocking_steps.is_empty());
        }
    }

    #[test]
    fn persisted_cases_replay_legal_transitions(
        ops in prop::collection::vec((1u8..=20, 0usize..5), 0..60),
    ) {
        let mut case = case_with(&["EX-1"]);
        for (i, (step, status)) in ops.into_iter().enumerate() {
            let _ = case.record_step("EX-1", step, STATUSES[status], "", "n/a", t(i as i64));
        }
        let dir = tempfile::tempdir().unwrap();
        cf::create_case_at(dir.path(), &case).unwrap();
        let loaded = cf::load_case(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &case);
        prop_assert!(loaded.step_histories_are_legal());
        for record in loaded.step_records() {
            let mut cur = StepStatus::Pending;
            for tr in &record.history {
                prop_assert_eq!(tr.from, cur);
                prop_assert!(tr.from.can_move_to(tr.to));
                cur = tr.to;
            }
            prop_assert_eq!(cur, record.status);
        }
    }

    #[test]
    fn strict_and_recover_agree_on_valid_logs(seed in any::<u64>(), count in 0usize..200) {
        let frames = random_frames(seed, count);
        let bytes = generate(&synth_header(seed), &frames, true).unwrap();
        let strict = parse_strict(&bytes).unwrap();
        let recovered = parse_recover(&bytes);
        prop_assert_eq!(&strict.frames, &frames);
        prop_assert_eq!(&recovered.frames, &frames);
        prop_assert!(recovered.closed);
    }

    #[test]
    fn finalize_closes_exactly_once(seed in any::<u64>(), count in 0usize..120, cut in any::<prop::sample::Index>()) {
        let frames = random_frames(seed, count);
        let bytes = generate(&synth_header(seed), &frames, false).unwrap();
        let t = HEADER_LEN + cut.index(bytes.len() - HEADER_LEN + 1);
        let clone = clone_stub();
        let fixed = finalize_log(&clone, &bytes[..t]).unwrap();
        let log = parse_strict(&fixed).unwrap();
        prop_assert_eq!(log.frames, parse_recover(&bytes[..t]).frames);
        prop_assert!(matches!(finalize_log(&clone, &fixed), Err(FinalizeError::AlreadyClosed)));
    }

    #[test]
    fn recovery_is_total(noise in prop::collection::vec(any::<u8>(), 0..4096)) {
        let log = parse_recover(&noise);
        let report = log.recovery.expect("noise never parses as a closed log");
        prop_assert_eq!(report.frames_recovered as usize, log.frames.len());
        prop_assert!(report.bytes_consumed <= report.bytes_total);
        prop_assert_eq!(report.bytes_total as usize, noise.len());
    }

    #[test]
    fn recovery_salvages_frames_around_garbage(
        seed in any::<u64>(),
        count in 1usize..60,
        junk in prop::collection::vec(any::<u8>(), 1..64),
        at in any::<prop::sample::Index>(),
    ) {
        // Garbage spliced between two frames never costs a real frame.
        let frames = random_frames(seed, count);
        let header = synth_header(seed);
        let k = at.index(count + 1);
        let mut bytes = generate(&header, &frames[..k], false).unwrap();
        let tail = generate(&header, &frames[k..], false).unwrap();
        let junk: Vec<u8> = junk.into_iter().map(|b| if b == 0xAA { 0 } else { b }).collect();
        bytes.extend_from_slice(&junk);
        bytes.extend_from_slice(&tail[HEADER_LEN..]);
        let log = parse_recover(&bytes);
        prop_assert_eq!(&log.frames, &frames);
        prop_assert!(log.recovery.unwrap().frames_dropped >= 1);
    }

    #[test]
    fn synthetic_flights_are_plausible(seed in any::<u64>(), duration in 0u32..120, rate in 1u32..10) {
        let frames = fixtures::synth_flight(seed, duration, rate).unwrap();
        prop_assert_eq!(frames.len(), (duration * rate) as usize * FRAMES_PER_TICK);
        prop_assert_eq!(&frames, &fixtures::synth_flight(seed, duration, rate).unwrap());
        let mut last_capacity = u8::MAX;
        let mut last_fix: Option<(u64, i32, i32, i32)> = None;
        for f in &frames {
            match &f.payload {
                Payload::Battery(b) => {
                    prop_assert!(b.capacity_pct <= last_capacity);
                    last_capacity = b.capacity_pct;
                }
                Payload::Motor(m) => prop_assert!(m.rpm.iter().all(|&r| r <= fixtures::MAX_RPM)),
                Payload::Attitude(a) => prop_assert!((-18_000..18_000).contains(&a.yaw_cdeg)),
                Payload::Gps(g) if g.fix != 0 => {
                    if let Some((ts, lat, lon, alt)) = last_fix {
                        let dt = (f.timestamp_ms - ts) as f64 / 1000.0;
                        let lat_deg = f64::from(lat) / 1e7;
                        let dn = f64::from(g.lat_e7 - lat) / 1e7 * 111_320.0;
                        let de = f64::from(g.lon_e7 - lon) / 1e7 * 111_320.0 * lat_deg.to_radians().cos();
                        let du = f64::from(g.alt_mm - alt).abs() / 1000.0;
                        // Horizontal and vertical bounds, with 2% slack for rounding.
                        prop_assert!((dn * dn + de * de).sqrt() <= fixtures::MAX_SPEED_M_S * dt * 1.02 + 0.02);
                        prop_assert!(du <= fixtures::MAX_CLIMB_M_S * dt * 1.02 + 0.002);
                    }
                    last_fix = Some((f.timestamp_ms, g.lat_e7, g.lon_e7, g.alt_mm));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn export_counts_and_determinism(seed in any::<u64>(), count in 0usize..300) {
        let frames = random_frames(seed, count);
        let log = parse_strict(&generate(&synth_header(seed), &frames, true).unwrap()).unwrap();
        let csv = export::to_csv(&log);
        prop_assert_eq!(&csv, &export::to_csv(&log));
        let rows = csv::Reader::from_reader(&csv[..]).records().count();
        prop_assert_eq!(rows, count);
        let fixes = frames.iter().filter(|f| matches!(&f.payload, Payload::Gps(g) if g.fix != 0)).count();
        prop_assert_eq!(export::kml_coordinates(&log).len(), fixes);
        prop_assert_eq!(export::to_kml(&log, "x"), export::to_kml(&log, "x"));
    }

    #[test]
    fn fixed_point_round_trips(v in any::<i32>(), places in 0u32..8) {
        let s = export::fixed_point(i64::from(v), places);
        let digits: String = s.chars().filter(|c| *c != '.').collect();
        prop_assert_eq!(digits.parse::<i64>().unwrap(), i64::from(v));
        let frac = s.split_once('.').map_or(0, |(_, f)| f.len());
        prop_assert_eq!(frac, places as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn carving_recovers_every_planted_file(
        seed in any::<u64>(),
        kinds in prop::collection::vec(0u8..3, 0..6),
        gaps in prop::collection::vec(0usize..3000, 6),
    ) {
        let mut image = Vec::new();
        let mut planted = Vec::new();
        for (i, kind) in kinds.iter().enumerate() {
            image.extend(std::iter::repeat_n(0u8, gaps[i]));
            let s = seed.wrapping_add(i as u64);
            let bytes = match kind {
                0 => fixtures::synth_jpeg(s, 500 + (s % 3000) as usize),
                1 => fixtures::synth_png(s, 1 + (s % 40) as u32, 1 + (s % 20) as u32),
                _ => fixtures::synth_mp4(s, 100 + (s % 2000) as usize),
            };
            planted.push((image.len(), bytes.clone()));
            image.extend_from_slice(&bytes);
        }
        image.extend(std::iter::repeat_n(0u8, gaps[5]));

        let carved = carving::carve_bytes(&image, &Signature::builtin());
        prop_assert_eq!(&carved, &carving::carve_bytes(&image, &Signature::builtin()));
        for (_, range, _) in &carved {
            prop_assert!(range.end <= image.len());
        }
        for (offset, bytes) in &planted {
            let found = carved.iter().any(|(hit, range, terminated)| {
                hit.offset as usize == *offset && *terminated && image[range.clone()] == bytes[..]
            });
            prop_assert!(found, "file planted at {} not recovered", offset);
        }
    }

    #[test]
    fn acquisition_is_faithful_and_digests_agree(data in prop::collection::vec(any::<u8>(), 0..70_000), sector in prop::sample::select(vec![1usize, 512, 4096])) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.raw");
        let image = imaging::acquire(std::io::Cursor::new(data.clone()), &path, sector, t(0), "test").unwrap();
        let stored = fs::read(&path).unwrap();
        prop_assert_eq!(&stored, &data);
        let want: [u8; 32] = Sha256::digest(&stored).into();
        prop_assert_eq!(image.manifest.sha256, want);
        let want1: [u8; 20] = sha1::Sha1::digest(&stored).into();
        prop_assert_eq!(image.manifest.sha1, want1);
        prop_assert!(image.manifest.bad_sectors.is_empty());
        let (_, clone) = imaging::clone_image(&image, &dir.path().join("clone.raw"), t(1)).unwrap();
        prop_assert!(imaging::diff_images(&image, &clone).unwrap().is_empty());
    }
}
