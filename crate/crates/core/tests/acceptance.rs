//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha1::Sha1;
use sha2::{Digest, Sha256};

use dronetrace::carving::{self, Signature};
use dronetrace::casefile::{
    verify_records, CapabilityChecklist, CaseFile, CustodyAction, CustodyEvent, Exhibit,
    ExhibitKind, LedgerStatus, StepStatus, TriState, STEP_COUNT,
};
use dronetrace::export;
use dronetrace::fixtures::{self, random_frames, synth_header};
use dronetrace::flightlog::{
    finalize_log, generate, parse_recover, parse_strict, FlightFrame, ParseError, Payload,
    RecordType, FOOTER_LEN, HEADER_LEN,
};
use dronetrace::imaging::{self, ByteRange, VerifyOutcome};
use dronetrace::report::{self, EvidenceKind, NewEvidence};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn t(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_481_400_000 + secs, 0).unwrap()
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 case-study pipeline", case_study_pipeline),
        ("2 round-trip over 1000 logs", round_trip),
        ("3 prefix recovery and noise totality", prefix_recovery),
        ("4 ledger tamper evidence", tamper_evidence),
        ("5 destructive-step gate soundness", gate_soundness),
        ("6 imaging integrity", imaging_integrity),
        ("7 export fidelity", export_fidelity),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance criterion {name}: PASS ({secs:.2}s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("acceptance criterion {name}: FAIL ({secs:.2}s) {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn checklist() -> CapabilityChecklist {
    CapabilityChecklist {
        video_capture: Some(TriState::Yes),
        audio_capture: Some(TriState::No),
        load_carrying: Some(TriState::No),
        offensive: Some(TriState::No),
        defensive: Some(TriState::Unknown),
        ..Default::default()
    }
}

fn new_evidence(
    kind: EvidenceKind,
    exhibit: &str,
    path: &Path,
    op: &str,
    image: Option<&Path>,
) -> NewEvidence {
    NewEvidence {
        kind,
        source_exhibit: exhibit.to_owned(),
        source_image: image.map(Path::to_path_buf),
        producing_operation: op.to_owned(),
        artifact_path: path.to_path_buf(),
        relevance_note: String::new(),
        derived_from: None,
    }
}

fn case_study_pipeline() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let study = fixtures::case_study_card(2016).map_err(|e| e.to_string())?;
    let source_path = root.join("card.raw");
    fs::write(&source_path, &study.card.image).map_err(|e| e.to_string())?;

    let mut clock = 0i64;
    let mut now = || {
        clock += 1;
        t(clock)
    };
    let mut case =
        CaseFile::new("CASE-2016-001", "A. Examiner", now()).map_err(|e| e.to_string())?;
    let mut uav = Exhibit::new("EX-1", ExhibitKind::Uav);
    uav.capabilities = checklist();
    let mut sd = Exhibit::new("EX-1/1", ExhibitKind::MemoryCard);
    sd.parent_exhibit = Some("EX-1".into());
    sd.description = "4GB SanDisk Micro SD card".into();
    sd.capabilities = checklist();
    case.add_exhibit(uav).map_err(|e| e.to_string())?;
    case.add_exhibit(sd).map_err(|e| e.to_string())?;
    case.append_custody(CustodyEvent {
        actor: "PC 1234".into(),
        action: CustodyAction::Seized,
        exhibit_id: "EX-1".into(),
        occurred_at: now(),
        note: "seized at scene".into(),
    })
    .map_err(|e| e.to_string())?;

    // Acquire and verify.
    let image_path = root.join("card.img");
    let src = File::open(&source_path).map_err(|e| e.to_string())?;
    let original = imaging::acquire(
        src,
        &image_path,
        imaging::DEFAULT_SECTOR_SIZE,
        now(),
        "EX-1/1 via write blocker",
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        original.manifest.bad_sectors.is_empty(),
        "unexpected bad sectors"
    );
    ensure!(
        imaging::verify_image(&original)
            .map_err(|e| e.to_string())?
            .is_ok(),
        "fresh image does not verify"
    );
    case.record_image("EX-1/1", original.clone())
        .map_err(|e| e.to_string())?;

    // Parse every log straight out of the image.
    let layout = &study.card.layout;
    let mut strict_ok = 0;
    let mut missing_footer = Vec::new();
    let logs_dir = root.join("logs");
    fs::create_dir(&logs_dir).map_err(|e| e.to_string())?;
    let mut fly104 = None;
    for (name, frames) in &study.flights {
        let entry = layout
            .iter()
            .find(|e| &e.name == name)
            .ok_or(format!("{name} not in layout"))?;
        let bytes = imaging::read_range(&original, entry.offset, entry.length)
            .map_err(|e| e.to_string())?;
        match parse_strict(&bytes) {
            Ok(log) => {
                ensure!(
                    &log.frames == frames,
                    "{name}: strict frames differ from generated"
                );
                strict_ok += 1;
                let path = logs_dir.join(name);
                fs::write(&path, &bytes).map_err(|e| e.to_string())?;
                case.register_evidence(new_evidence(
                    EvidenceKind::FlightLog,
                    "EX-1/1",
                    &path,
                    "parse_strict",
                    Some(&image_path),
                ))
                .map_err(|e| e.to_string())?;
            }
            Err(ParseError::MissingFooter { .. }) => {
                missing_footer.push(name.clone());
                fly104 = Some((entry.clone(), bytes, frames.clone()));
            }
            Err(e) => return Err(format!("{name}: unexpected {e}")),
        }
    }
    ensure!(strict_ok == 9, "{strict_ok} strict successes, expected 9");
    ensure!(
        missing_footer == ["FLY104.DAT"],
        "MISSING_FOOTER on {missing_footer:?}"
    );
    let (entry, unclosed, frames) = fly104.unwrap();

    let recovered = parse_recover(&unclosed);
    ensure!(
        recovered.frames == frames,
        "recovery got {} of {} frames",
        recovered.frames.len(),
        frames.len()
    );
    ensure!(!recovered.closed, "recovered log claims to be closed");

    // Clone, finalize on the clone, write back.
    let clone_path = root.join("clone.img");
    let (record, mut clone) =
        imaging::clone_image(&original, &clone_path, now()).map_err(|e| e.to_string())?;
    ensure!(record.verified, "clone not verified");
    ensure!(
        imaging::diff_images(&original, &clone)
            .map_err(|e| e.to_string())?
            .is_empty(),
        "fresh clone differs"
    );
    case.record_image("EX-1/1", clone.clone())
        .map_err(|e| e.to_string())?;
    ensure!(
        finalize_log(&original, &unclosed).is_err(),
        "finalize accepted the original image"
    );
    let finalized = finalize_log(&clone, &unclosed).map_err(|e| e.to_string())?;
    let strict = parse_strict(&finalized).map_err(|e| format!("finalized FLY104: {e}"))?;
    ensure!(strict.frames == frames, "finalized FLY104 frames differ");
    imaging::write_into_clone(&mut clone, entry.offset, &finalized, now())
        .map_err(|e| e.to_string())?;
    let diff = imaging::diff_images(&original, &clone).map_err(|e| e.to_string())?;
    let footer_at = entry.offset + entry.length;
    ensure!(
        diff == [ByteRange::new(footer_at, FOOTER_LEN as u64)],
        "clone diff {diff:?}, expected the footer at {footer_at}"
    );
    let fly104_path = logs_dir.join("FLY104.DAT");
    fs::write(&fly104_path, &finalized).map_err(|e| e.to_string())?;
    let fly104_item = case
        .register_evidence(new_evidence(
            EvidenceKind::FlightLog,
            "EX-1/1",
            &fly104_path,
            "parse_recover then finalize_log on clone",
            Some(&clone_path),
        ))
        .map_err(|e| e.to_string())?;

    // Carve from the original.
    let carved_dir = root.join("carved");
    let carved =
        carving::carve(&original, &Signature::builtin(), &carved_dir).map_err(|e| e.to_string())?;
    for (name, jpeg) in &study.jpegs {
        let want: [u8; 32] = Sha256::digest(jpeg).into();
        let hit = carved
            .iter()
            .find(|c| c.content_digest == want && c.terminated);
        let hit = hit.ok_or(format!("{name} not carved byte-identically"))?;
        ensure!(
            fs::read(&hit.output_path).map_err(|e| e.to_string())? == *jpeg,
            "{name}: carved file differs"
        );
        case.register_evidence(new_evidence(
            EvidenceKind::CarvedMedia,
            "EX-1/1",
            &hit.output_path,
            "carve",
            Some(&image_path),
        ))
        .map_err(|e| e.to_string())?;
    }

    // Exports.
    let csv_path = root.join("FLY104.csv");
    let kml_path = root.join("FLY104.kml");
    fs::write(&csv_path, export::to_csv(&strict)).map_err(|e| e.to_string())?;
    let kml = export::to_kml(&strict, "FLY104.DAT");
    fs::write(&kml_path, &kml).map_err(|e| e.to_string())?;
    let fixes = strict
        .frames
        .iter()
        .filter(|f| matches!(&f.payload, Payload::Gps(g) if g.fix != 0))
        .count();
    let coords = kml_coordinate_lines(&String::from_utf8_lossy(&kml));
    ensure!(
        coords == fixes,
        "KML has {coords} coordinates, {fixes} GPS fixes"
    );
    for path in [&csv_path, &kml_path] {
        let mut ev = new_evidence(
            EvidenceKind::Export,
            "EX-1/1",
            path,
            "export",
            Some(&clone_path),
        );
        ev.derived_from = Some(fly104_item.item_id.clone());
        case.register_evidence(ev).map_err(|e| e.to_string())?;
    }

    // Confirm everything.
    for item in case.evidence().to_vec() {
        let result = report::confirm(&case, &item).map_err(|e| e.to_string())?;
        ensure!(
            result.agreed,
            "{} not confirmed: {}",
            item.item_id,
            result.detail
        );
        case.record_confirmation(result)
            .map_err(|e| e.to_string())?;
    }

    // Walk both exhibits through all twenty steps.
    for exhibit in ["EX-1", "EX-1/1"] {
        for step in 1..=STEP_COUNT {
            case.record_step(exhibit, step, StepStatus::InProgress, "", "", now())
                .map_err(|e| e.to_string())?;
            let (status, why) = if step == 17 {
                (
                    StepStatus::NotApplicable,
                    "non-destructive methods recovered the data",
                )
            } else {
                (StepStatus::Done, "")
            };
            case.record_step(exhibit, step, status, "", why, now())
                .map_err(|e| e.to_string())?;
        }
    }
    let violations = case
        .exhibits()
        .iter()
        .filter(|e| {
            !case
                .check_gate(&e.exhibit_id, 20)
                .map(|d| d.allowed)
                .unwrap_or(false)
        })
        .count();
    ensure!(violations == 0, "{violations} gate violations");
    ensure!(case.verify_ledger().is_ok(), "ledger does not verify");

    let report_path = root.join("report.txt");
    let doc = report::render_report(
        &case,
        "FLY104 places the UAV over the scene.",
        now(),
        &report_path,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        doc.flagged_items.is_empty(),
        "flagged items {:?}",
        doc.flagged_items
    );
    let text = fs::read_to_string(&report_path).map_err(|e| e.to_string())?;
    let logs_listed = case
        .evidence()
        .iter()
        .filter(|i| i.kind == EvidenceKind::FlightLog)
        .count();
    ensure!(logs_listed == 10, "{logs_listed} flight logs registered");
    for needle in [
        "FLY095.DAT",
        "FLY104.DAT",
        "FLY104.csv",
        "FLY104.kml",
        "finalize_log",
    ] {
        ensure!(text.contains(needle), "report does not mention {needle}");
    }

    // The original is untouched by the whole run.
    ensure!(
        imaging::diff_images(&original, &original)
            .map_err(|e| e.to_string())?
            .is_empty(),
        "original differs from itself"
    );
    ensure!(
        imaging::diff_files(&source_path, &image_path)
            .map_err(|e| e.to_string())?
            .is_empty(),
        "original image no longer matches the card"
    );
    ensure!(
        imaging::verify_image(&original)
            .map_err(|e| e.to_string())?
            .is_ok(),
        "original fails verification after the run"
    );

    let elapsed = started.elapsed();
    ensure!(
        elapsed < Duration::from_secs(10),
        "took {elapsed:?}, budget 10 s"
    );
    Ok(format!(
        "9 strict + FLY104 MISSING_FOOTER, {} frames recovered and finalized, 3/3 JPEGs, {coords} KML points, report with 0 gate violations in {:.2}s",
        frames.len(),
        elapsed.as_secs_f64()
    ))
}

fn kml_coordinate_lines(kml: &str) -> usize {
    let start = kml.find("<coordinates>").map(|i| i + "<coordinates>".len());
    let end = kml.find("</coordinates>");
    match (start, end) {
        (Some(s), Some(e)) if s <= e => kml[s..e].split_whitespace().count(),
        _ => 0,
    }
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut seen = [0u64; 5];
    let mut frames_total = 0;
    for i in 0..1000u64 {
        let seed = rng.gen();
        let count = rng.gen_range(0..=500);
        let frames = random_frames(seed, count);
        let header = synth_header(seed);
        let bytes = generate(&header, &frames, true).map_err(|e| format!("log {i}: {e}"))?;
        let log = parse_strict(&bytes).map_err(|e| format!("log {i} (seed {seed}): {e}"))?;
        ensure!(log.header == header, "log {i}: header differs");
        ensure!(log.frames == frames, "log {i} (seed {seed}): frames differ");
        ensure!(
            log.closed && log.recovery.is_none(),
            "log {i}: not reported closed"
        );
        for f in &frames {
            seen[RecordType::ALL
                .iter()
                .position(|r| *r == f.record_type())
                .unwrap()] += 1;
        }
        frames_total += count;
    }
    ensure!(
        seen.iter().all(|&n| n > 0),
        "record types not all exercised: {seen:?}"
    );
    Ok(format!(
        "0 failures, {frames_total} frames, per-type counts {seen:?}"
    ))
}

/// Frame end offsets read straight from the length fields, independent of
/// the library's decoder.
fn frame_ends(bytes: &[u8]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut pos = HEADER_LEN;
    while pos < bytes.len() && bytes[pos] == 0xAA {
        let len = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        pos += 4 + len + 4;
        ends.push(pos);
    }
    ends
}

fn prefix_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut cuts = 0usize;
    for i in 0..200u64 {
        let seed = rng.gen();
        let frames = random_frames(seed, rng.gen_range(0..=120));
        let bytes = generate(&synth_header(seed), &frames, true).map_err(|e| e.to_string())?;
        let ends = frame_ends(&bytes);
        ensure!(
            ends.len() == frames.len(),
            "log {i}: oracle found {} frames",
            ends.len()
        );
        let mut points: Vec<usize> = std::iter::once(HEADER_LEN)
            .chain(ends.iter().copied())
            .collect();
        let starts: Vec<usize> = std::iter::once(HEADER_LEN)
            .chain(ends.iter().copied())
            .collect();
        let body_end = *starts.last().unwrap();
        for _ in 0..10 {
            // Strictly inside a frame, or inside the footer.
            let k = rng.gen_range(0..=frames.len());
            let (lo, hi) = if k < frames.len() {
                (starts[k], ends[k])
            } else {
                (body_end, bytes.len())
            };
            points.push(rng.gen_range(lo + 1..hi));
        }
        points.push(bytes.len());
        for t in points {
            let log = parse_recover(&bytes[..t]);
            let expect = ends.iter().filter(|&&e| e <= t).count();
            ensure!(
                log.frames[..] == frames[..expect],
                "log {i} (seed {seed}) cut at {t}: recovered {} frames, expected {expect}",
                log.frames.len()
            );
            ensure!(
                log.closed == (t == bytes.len()),
                "log {i} cut at {t}: closed = {}",
                log.closed
            );
            if let Some(r) = &log.recovery {
                ensure!(
                    r.frames_recovered as usize == log.frames.len(),
                    "log {i} cut at {t}: report count mismatch"
                );
                ensure!(
                    r.bytes_consumed <= r.bytes_total && r.bytes_total == t as u64,
                    "log {i} cut at {t}: byte accounting"
                );
            }
            cuts += 1;
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(0x5eed_0033);
    let header = dronetrace::flightlog::DatHeader::new([7; 16], 1);
    let valid = generate(&header, &random_frames(1, 8), true).map_err(|e| e.to_string())?;
    let mut crashes = 0;
    for n in 0..10_000 {
        let len = noise_rng.gen_range(0..2048);
        let mut input: Vec<u8> = (0..len).map(|_| noise_rng.gen()).collect();
        match n % 4 {
            // Plausible prefix so the scanner gets past the header.
            1 => input
                .splice(0..0, valid[..HEADER_LEN].iter().copied())
                .for_each(drop),
            // A real log with random bytes overwritten.
            2 => {
                input = valid.clone();
                for _ in 0..noise_rng.gen_range(1..8) {
                    let at = noise_rng.gen_range(0..input.len());
                    input[at] = noise_rng.gen();
                }
            }
            // Dense sync bytes.
            3 => input.iter_mut().step_by(3).for_each(|b| *b = 0xAA),
            _ => {}
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
            let log = parse_recover(&input);
            let r = log.recovery.clone();
            (log.frames.len(), r)
        }));
        match outcome {
            Ok((frames, Some(r))) => {
                ensure!(
                    r.frames_recovered as usize == frames,
                    "noise {n}: report count mismatch"
                );
                ensure!(
                    r.bytes_consumed <= r.bytes_total,
                    "noise {n}: consumed more than total"
                );
                ensure!(
                    r.bytes_total == input.len() as u64,
                    "noise {n}: wrong total"
                );
            }
            Ok((_, None)) => {}
            Err(_) => crashes += 1,
        }
    }
    ensure!(crashes == 0, "{crashes} crashes on noise inputs");
    Ok(format!(
        "{cuts} truncation points exact, 0 crashes on 10000 noise inputs"
    ))
}

fn tamper_evidence() -> Outcome {
    let mut case = CaseFile::new("CASE-T", "A. Examiner", t(0)).map_err(|e| e.to_string())?;
    case.add_exhibit(Exhibit::new("EX-1", ExhibitKind::Uav))
        .map_err(|e| e.to_string())?;
    for i in 0..50 {
        case.append_custody(CustodyEvent {
            actor: format!("officer {}", i % 7),
            action: CustodyAction::ALL[i % CustodyAction::ALL.len()],
            exhibit_id: "EX-1".into(),
            occurred_at: t(60 * i as i64),
            note: format!("movement {i}"),
        })
        .map_err(|e| e.to_string())?;
    }
    let records = case.ledger_records();
    ensure!(records.len() == 50, "{} entries", records.len());
    ensure!(
        verify_records(&records) == LedgerStatus::Ok,
        "unmutated ledger does not verify"
    );
    ensure!(
        case.verify_ledger() == LedgerStatus::Ok,
        "unmutated case ledger does not verify"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut worst = 0;
    for i in 0..50usize {
        let mut mutated = records.clone();
        let at = rng.gen_range(0..mutated[i].len());
        mutated[i][at] ^= rng.gen_range(1..=255u8);
        match verify_records(&mutated) {
            LedgerStatus::Tampered { sequence } => {
                ensure!(
                    sequence as usize <= i,
                    "entry {i} byte {at}: TAMPERED at {sequence}"
                );
                worst = worst.max(i - sequence as usize);
            }
            LedgerStatus::Ok => return Err(format!("entry {i} byte {at}: mutation undetected")),
        }
    }
    Ok(format!("50/50 mutations detected at or before the mutated entry; unmutated ledger OK (max lead {worst})"))
}

fn gate_soundness() -> Outcome {
    const CLASSES: usize = 3;
    let mut checked = 0;
    for terminal in [
        StepStatus::Done,
        StepStatus::Failed,
        StepStatus::NotApplicable,
    ] {
        for combo in 0..CLASSES.pow(5) {
            let mut case =
                CaseFile::new("CASE-G", "A. Examiner", t(0)).map_err(|e| e.to_string())?;
            case.add_exhibit(Exhibit::new("EX-1", ExhibitKind::Uav))
                .map_err(|e| e.to_string())?;
            let mut clock = 0;
            let mut expected_blocking = Vec::new();
            for (k, step) in (11..=15u8).enumerate() {
                let class = combo / CLASSES.pow(k as u32) % CLASSES;
                let path: &[StepStatus] = match class {
                    0 => &[],
                    1 => &[StepStatus::InProgress],
                    _ => &[StepStatus::InProgress, terminal],
                };
                if class < 2 {
                    expected_blocking.push(step);
                }
                for &s in path {
                    clock += 1;
                    case.record_step(
                        "EX-1",
                        step,
                        s,
                        "",
                        "not relevant to this exhibit",
                        t(clock),
                    )
                    .map_err(|e| format!("combo {combo}: step {step} -> {s}: {e}"))?;
                }
            }
            let decision = case.check_gate("EX-1", 17).map_err(|e| e.to_string())?;
            let all_terminal = expected_blocking.is_empty();
            ensure!(
                decision.allowed == all_terminal,
                "combo {combo} ({terminal}): allowed = {}",
                decision.allowed
            );
            ensure!(
                decision.blocking_steps == expected_blocking,
                "combo {combo}: blocking {:?}",
                decision.blocking_steps
            );
            let attempt =
                case.record_step("EX-1", 17, StepStatus::InProgress, "", "", t(clock + 1));
            ensure!(
                attempt.is_ok() == all_terminal,
                "combo {combo} ({terminal}): record_step(17) = {attempt:?}"
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} combinations (3^5 for each terminal status), allowed iff all of 11-15 terminal"
    ))
}

/// A source whose listed sectors fail to read.
struct FaultySource {
    data: io::Cursor<Vec<u8>>,
    bad: Vec<u64>,
    sector: u64,
}

impl Read for FaultySource {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let pos = self.data.position();
        if self.bad.contains(&(pos / self.sector)) {
            return Err(io::Error::other("unreadable sector"));
        }
        // Never read across into the next sector, so faults stay sector-exact.
        let room = (self.sector - pos % self.sector) as usize;
        let n = buf.len().min(room);
        self.data.read(&mut buf[..n])
    }
}

impl Seek for FaultySource {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        self.data.seek(pos)
    }
}

fn imaging_integrity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let sector = imaging::DEFAULT_SECTOR_SIZE as u64;
    let mut total_bad = 0;
    let mut total_bytes = 0u64;
    for i in 0..20 {
        // Log-uniform between 1 KiB and 16 MiB, with the extremes pinned.
        let size = match i {
            0 => 1024,
            19 => 16 << 20,
            _ => 2f64.powf(rng.gen_range(10.0..24.0)) as usize,
        };
        let mut data = vec![0u8; size];
        rng.fill(&mut data[..]);
        let sectors = (size as u64).div_ceil(sector);
        let mut bad: Vec<u64> = (0..rng.gen_range(0..=6))
            .map(|_| rng.gen_range(0..sectors))
            .collect();
        bad.sort_unstable();
        bad.dedup();

        let mut expected = data.clone();
        let mut expected_ranges = Vec::new();
        for &s in &bad {
            let start = (s * sector) as usize;
            let end = (start + sector as usize).min(size);
            expected[start..end].fill(0);
            expected_ranges.push(ByteRange::new(start as u64, (end - start) as u64));
        }

        let path = dir.path().join(format!("img{i}.raw"));
        let source = FaultySource {
            data: io::Cursor::new(data),
            bad: bad.clone(),
            sector,
        };
        let image = imaging::acquire(source, &path, sector as usize, t(i), "synthetic")
            .map_err(|e| format!("image {i}: {e}"))?;

        let on_disk = fs::read(&path).map_err(|e| e.to_string())?;
        ensure!(
            on_disk == expected,
            "image {i}: stored bytes differ from the zero-filled source"
        );
        let sha256: [u8; 32] = Sha256::digest(&on_disk).into();
        let sha1: [u8; 20] = Sha1::digest(&on_disk).into();
        ensure!(
            image.manifest.sha256 == sha256,
            "image {i}: SHA-256 disagrees with the oracle"
        );
        ensure!(
            image.manifest.sha1 == sha1,
            "image {i}: SHA-1 disagrees with the oracle"
        );
        ensure!(image.manifest.size_bytes == size as u64, "image {i}: size");
        ensure!(
            image.manifest.bad_sectors == expected_ranges,
            "image {i}: bad sectors {:?}, injected {expected_ranges:?}",
            image.manifest.bad_sectors
        );
        ensure!(
            matches!(imaging::verify_image(&image), Ok(VerifyOutcome::Ok)),
            "image {i}: does not verify"
        );
        let reloaded = imaging::StorageImage::load(&path).map_err(|e| e.to_string())?;
        ensure!(
            reloaded.manifest == image.manifest,
            "image {i}: sidecar round trip"
        );
        total_bad += bad.len();
        total_bytes += size as u64;
    }
    Ok(format!("20 images, {total_bytes} bytes, {total_bad} injected bad sectors zero-filled and listed exactly"))
}

/// Parses a fixed-point decimal with exactly `places` fractional digits.
fn unscale(s: &str, places: usize) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = match body.split_once('.') {
        Some((w, f)) => (w, f),
        None if places == 0 => (body, ""),
        None => return None,
    };
    if frac.len() != places || whole.is_empty() {
        return None;
    }
    let v: i64 = format!("{whole}{frac}").parse().ok()?;
    Some(if neg { -v } else { v })
}

fn check_row(i: usize, row: &csv::StringRecord, frame: &FlightFrame) -> Result<(), String> {
    let int = |col: usize| -> Result<i64, String> {
        row[col]
            .parse()
            .map_err(|_| format!("row {i} col {col}: `{}`", &row[col]))
    };
    let fixed = |col: usize, places: usize| -> Result<i64, String> {
        unscale(&row[col], places).ok_or(format!(
            "row {i} col {col}: `{}` is not {places}-place fixed point",
            &row[col]
        ))
    };
    ensure!(row.len() == 20, "row {i}: {} columns", row.len());
    ensure!(int(0)? == i as i64, "row {i}: index");
    ensure!(
        row[1].parse::<u64>().ok() == Some(frame.timestamp_ms),
        "row {i}: timestamp"
    );
    ensure!(&row[2] == frame.record_type().name(), "row {i}: type");
    let filled: Vec<usize> = (3..20).filter(|&c| !row[c].is_empty()).collect();
    match &frame.payload {
        Payload::Gps(g) => {
            ensure!(fixed(3, 7)? == i64::from(g.lat_e7), "row {i}: lat");
            ensure!(fixed(4, 7)? == i64::from(g.lon_e7), "row {i}: lon");
            ensure!(fixed(5, 3)? == i64::from(g.alt_mm), "row {i}: alt");
            ensure!(
                int(6)? == i64::from(g.fix) && int(7)? == i64::from(g.num_sats),
                "row {i}: fix/sats"
            );
            ensure!(
                filled == [3, 4, 5, 6, 7],
                "row {i}: sparse columns {filled:?}"
            );
        }
        Payload::Motor(m) => {
            for k in 0..4 {
                ensure!(int(8 + k)? == i64::from(m.rpm[k]), "row {i}: rpm{}", k + 1);
            }
            ensure!(
                filled == [8, 9, 10, 11],
                "row {i}: sparse columns {filled:?}"
            );
        }
        Payload::Battery(b) => {
            ensure!(int(12)? == i64::from(b.capacity_pct), "row {i}: capacity");
            ensure!(int(13)? == i64::from(b.voltage_mv), "row {i}: voltage");
            ensure!(fixed(14, 2)? == i64::from(b.temp_centi_c), "row {i}: temp");
            ensure!(filled == [12, 13, 14], "row {i}: sparse columns {filled:?}");
        }
        Payload::Attitude(a) => {
            ensure!(fixed(15, 2)? == i64::from(a.pitch_cdeg), "row {i}: pitch");
            ensure!(fixed(16, 2)? == i64::from(a.roll_cdeg), "row {i}: roll");
            ensure!(fixed(17, 2)? == i64::from(a.yaw_cdeg), "row {i}: yaw");
            ensure!(filled == [15, 16, 17], "row {i}: sparse columns {filled:?}");
        }
        Payload::Event(e) => {
            ensure!(int(18)? == i64::from(e.code), "row {i}: event code");
            ensure!(row[19] == e.message, "row {i}: event message");
        }
    }
    Ok(())
}

fn export_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let mut rows_checked = 0;
    for i in 0..100 {
        let seed: u64 = rng.gen();
        // Half adversarial, half physically plausible flights.
        let frames = if i % 2 == 0 {
            random_frames(seed, rng.gen_range(0..=400))
        } else {
            fixtures::synth_flight(seed, rng.gen_range(0..=60), 2).map_err(|e| e.to_string())?
        };
        let bytes = generate(&synth_header(seed), &frames, true).map_err(|e| e.to_string())?;
        let log = parse_strict(&bytes).map_err(|e| e.to_string())?;

        let csv_a = export::to_csv(&log);
        let kml_a = export::to_kml(&log, "FLY.DAT");
        let again =
            parse_strict(&generate(&synth_header(seed), &frames, true).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        ensure!(
            csv_a == export::to_csv(&again),
            "log {i}: CSV not byte-identical across runs"
        );
        ensure!(
            kml_a == export::to_kml(&again, "FLY.DAT"),
            "log {i}: KML not byte-identical across runs"
        );

        let mut reader = csv::ReaderBuilder::new().from_reader(&csv_a[..]);
        let header = reader.headers().map_err(|e| e.to_string())?.clone();
        ensure!(
            header.iter().collect::<Vec<_>>().join(",") == export::CSV_HEADER,
            "log {i}: header row"
        );
        let rows: Vec<csv::StringRecord> = reader
            .records()
            .collect::<Result<_, _>>()
            .map_err(|e| format!("log {i}: {e}"))?;
        ensure!(
            rows.len() == log.frames.len(),
            "log {i}: {} rows for {} frames",
            rows.len(),
            log.frames.len()
        );
        for (r, (row, frame)) in rows.iter().zip(&log.frames).enumerate() {
            check_row(r, row, frame).map_err(|e| format!("log {i}: {e}"))?;
        }
        let fixes = log
            .frames
            .iter()
            .filter(|f| matches!(&f.payload, Payload::Gps(g) if g.fix != 0))
            .count();
        let coords = kml_coordinate_lines(&String::from_utf8_lossy(&kml_a));
        ensure!(
            coords == fixes,
            "log {i}: {coords} KML coordinates, {fixes} fixes"
        );
        rows_checked += rows.len();
    }
    Ok(format!("100 logs, {rows_checked} rows re-scaled exactly, CSV and KML byte-identical across two runs"))
}
