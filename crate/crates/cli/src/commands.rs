use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use dronetrace::carving::{self, Signature};
use dronetrace::casefile::{
    self as cf, step_title, CaseError, CaseFile, CaseLock, CustodyAction, CustodyEvent, Exhibit,
    ExhibitKind, LedgerStatus, OffenceContext, StepStatus, STEP_COUNT,
};
use dronetrace::export;
use dronetrace::fixtures;
use dronetrace::flightlog::{
    finalize_log, generate, parse_recover, parse_strict, summarize, FlightLog, ParseError,
    RecordType,
};
use dronetrace::imaging::{self, StorageImage, VerifyOutcome};
use dronetrace::report::{self, EvidenceKind, NewEvidence, REPORT_FILE};

use crate::failure::{CliResult, Context, Failure, INTEGRITY};
use crate::{
    CarveCmd, CaseCmd, Cli, Command, CustodyCmd, EvidenceCmd, ExhibitCmd, ExportArgs, ExportCmd,
    FixtureCmd, ImageCmd, LogCmd, ReportCmd, Span, StepCmd,
};

struct Ctx {
    case: Option<PathBuf>,
    now: DateTime<Utc>,
    json: bool,
}

impl Ctx {
    fn case_dir(&self) -> CliResult<&Path> {
        self.case.as_deref().ok_or_else(|| {
            Failure::validation("no case directory: pass --case <DIR> or set DRONETRACE_CASE")
        })
    }

    fn load(&self) -> CliResult<CaseFile> {
        Ok(cf::load_case(self.case_dir()?)?)
    }

    /// Runs `f` under the case lock and saves only if it succeeds.
    fn mutate<T>(&self, f: impl FnOnce(&mut CaseFile) -> CliResult<T>) -> CliResult<T> {
        let dir = self.case_dir()?;
        let _lock = CaseLock::acquire(dir)?;
        let mut case = cf::load_case(dir)?;
        let out = f(&mut case)?;
        cf::save_case(dir, &case)?;
        Ok(out)
    }

    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> CliResult {
        let out = if self.json {
            serde_json::to_string_pretty(value)?
        } else {
            text().trim_end_matches('\n').to_owned()
        };
        if out.is_empty() {
            return Ok(());
        }
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        match writeln!(std::io::stdout().lock(), "{out}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.ctx("writing to stdout"),
        }
    }

    /// The image at `path`, with clone status taken from the case when the
    /// image is registered there.
    fn image(&self, path: &Path) -> CliResult<StorageImage> {
        let path = absolute(path);
        let mut image = StorageImage::load(&path)?;
        if let Some(dir) = &self.case {
            if let Ok(case) = cf::load_case(dir) {
                if let Some(rec) = case.image_record(&path) {
                    image.source_description = rec.image.source_description.clone();
                    if rec.image.is_clone {
                        let parent = rec.image.parent_image.clone().unwrap_or_default();
                        image = image.into_clone_of(parent);
                    }
                }
            }
        }
        Ok(image)
    }

    fn verified_image(&self, path: &Path) -> CliResult<StorageImage> {
        let image = self.image(path)?;
        match imaging::verify_image(&image)? {
            VerifyOutcome::Ok => Ok(image),
            VerifyOutcome::Mismatch { digests, actual_size } => Err(Failure::new(
                INTEGRITY,
                format!(
                    "{} does not match its manifest ({digests:?}, size {actual_size}); refusing to use it",
                    path.display()
                ),
            )),
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_owned())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn read(p: &Path) -> CliResult<Vec<u8>> {
    fs::read(p).ctx(format!("reading {}", p.display()))
}

fn write(p: &Path, bytes: &[u8]) -> CliResult {
    fs::write(p, bytes).ctx(format!("writing {}", p.display()))
}

fn write_new(p: &Path, bytes: &[u8]) -> CliResult {
    if p.exists() {
        return Err(Failure::validation(format!(
            "{} already exists",
            p.display()
        )));
    }
    write(p, bytes)
}

/// Parses an upper-snake-case enum the same way the case document does.
fn parse_enum<T: DeserializeOwned>(s: &str, what: &str) -> CliResult<T> {
    let norm = s.trim().to_ascii_uppercase().replace('-', "_");
    serde_json::from_value(serde_json::Value::String(norm))
        .map_err(|_| Failure::validation(format!("unknown {what} `{s}`")))
}

fn require_exhibit<'a>(case: &'a CaseFile, id: &str) -> CliResult<&'a Exhibit> {
    case.exhibit(id)
        .ok_or_else(|| CaseError::UnknownExhibit(id.to_owned()).into())
}

pub fn run(cli: Cli) -> CliResult {
    let ctx = Ctx {
        case: cli.case,
        now: cli.now.unwrap_or_else(Utc::now),
        json: cli.json,
    };
    match cli.command {
        Command::Case(c) => case_cmd(&ctx, c),
        Command::Exhibit(c) => exhibit_cmd(&ctx, c),
        Command::Custody(c) => custody_cmd(&ctx, c),
        Command::Step(c) => step_cmd(&ctx, c),
        Command::Image(c) => image_cmd(&ctx, c),
        Command::Log(c) => log_cmd(&ctx, c),
        Command::Carve(c) => carve_cmd(&ctx, c),
        Command::Export(c) => export_cmd(&ctx, c),
        Command::Evidence(c) => evidence_cmd(&ctx, c),
        Command::Report(c) => report_cmd(&ctx, c),
        Command::Fixture(c) => fixture_cmd(&ctx, c),
    }
}

fn case_cmd(ctx: &Ctx, cmd: CaseCmd) -> CliResult {
    match cmd {
        CaseCmd::New { id, examiner } => {
            let dir = ctx.case_dir()?;
            let case = CaseFile::new(&id, &examiner, ctx.now)?;
            cf::create_case_at(dir, &case)?;
            ctx.emit(&json!({ "case_id": id, "dir": dir }), || {
                format!("created case {id} in {}", dir.display())
            })
        }
        CaseCmd::Status => {
            let case = ctx.load()?;
            let status = case.case_status();
            let ledger = case.verify_ledger();
            let value = json!({
                "case_id": case.case_id,
                "examiner": case.examiner,
                "created_at": case.created_at,
                "exhibits": status.exhibits,
                "ledger": ledger,
                "ledger_entries": case.ledger().len(),
                "step_histories_legal": case.step_histories_are_legal(),
                "evidence_items": case.evidence().len(),
            });
            ctx.emit(&value, || {
                let mut out = format!("case {} (examiner {})\n", case.case_id, case.examiner);
                for e in &status.exhibits {
                    out.push_str(&format!("  {}", e.exhibit_id));
                    for (i, s) in e.stages.iter().enumerate() {
                        out.push_str(&format!("  stage{} {}/{}", i + 1, s.terminal, s.total));
                    }
                    out.push('\n');
                }
                out.push_str(&format!(
                    "  ledger: {} ({} entries)\n  evidence items: {}",
                    ledger_text(&ledger),
                    case.ledger().len(),
                    case.evidence().len()
                ));
                out
            })
        }
        CaseCmd::Offence {
            offence,
            role,
            targets,
        } => {
            ctx.mutate(|case| {
                case.set_offence(OffenceContext {
                    offence,
                    alleged_role: role,
                    evidence_targets: targets,
                });
                Ok(())
            })?;
            ctx.emit(&json!({ "ok": true }), || "offence context recorded".into())
        }
    }
}

fn ledger_text(status: &LedgerStatus) -> String {
    match status {
        LedgerStatus::Ok => "OK".into(),
        LedgerStatus::Tampered { sequence } => format!("TAMPERED at entry {sequence}"),
    }
}

fn exhibit_cmd(ctx: &Ctx, cmd: ExhibitCmd) -> CliResult {
    match cmd {
        ExhibitCmd::Add {
            id,
            kind,
            parent,
            description,
            descriptor,
        } => {
            let exhibit = match descriptor {
                Some(path) => serde_json::from_slice::<Exhibit>(&read(&path)?)
                    .ctx(format!("descriptor {}", path.display()))?,
                None => {
                    let kind: ExhibitKind =
                        parse_enum(kind.as_deref().unwrap_or_default(), "exhibit kind")?;
                    let mut e = Exhibit::new(id.as_deref().unwrap_or_default(), kind);
                    e.parent_exhibit = parent;
                    e.description = description.unwrap_or_default();
                    e
                }
            };
            let id = ctx.mutate(|case| Ok(case.add_exhibit(exhibit)?))?;
            ctx.emit(&json!({ "exhibit_id": id }), || {
                format!("added exhibit {id}")
            })
        }
        ExhibitCmd::Update { descriptor } => {
            let exhibit: Exhibit = serde_json::from_slice(&read(&descriptor)?)
                .ctx(format!("descriptor {}", descriptor.display()))?;
            let id = exhibit.exhibit_id.clone();
            ctx.mutate(|case| Ok(case.update_exhibit(exhibit)?))?;
            ctx.emit(&json!({ "exhibit_id": id }), || {
                format!("updated exhibit {id}")
            })
        }
        ExhibitCmd::Show { id } => {
            let case = ctx.load()?;
            match id {
                Some(id) => {
                    let e = require_exhibit(&case, &id)?;
                    ctx.emit(e, || serde_json::to_string_pretty(e).unwrap_or_default())
                }
                None => ctx.emit(&case.exhibits(), || {
                    case.exhibits()
                        .iter()
                        .map(|e| {
                            format!(
                                "{}  {:?}{}  {}\n",
                                e.exhibit_id,
                                e.kind,
                                e.parent_exhibit
                                    .as_deref()
                                    .map(|p| format!(" (in {p})"))
                                    .unwrap_or_default(),
                                e.description
                            )
                        })
                        .collect()
                }),
            }
        }
    }
}

fn custody_cmd(ctx: &Ctx, cmd: CustodyCmd) -> CliResult {
    match cmd {
        CustodyCmd::Log {
            exhibit,
            actor,
            action,
            note,
            at,
        } => {
            let action: CustodyAction = action.parse().map_err(Failure::validation)?;
            let event = CustodyEvent {
                actor,
                action,
                exhibit_id: exhibit,
                occurred_at: at.unwrap_or(ctx.now),
                note,
            };
            let entry = ctx.mutate(|case| Ok(case.append_custody(event)?))?;
            ctx.emit(&entry, || {
                format!(
                    "entry #{} {}",
                    entry.sequence,
                    hex::encode(entry.entry_digest)
                )
            })
        }
        CustodyCmd::Verify => {
            let case = ctx.load()?;
            let status = case.verify_ledger();
            ctx.emit(&status, || ledger_text(&status))?;
            match status {
                LedgerStatus::Ok => Ok(()),
                LedgerStatus::Tampered { sequence } => Err(Failure::new(
                    INTEGRITY,
                    format!(
                        "LEDGER_TAMPERED: custody ledger fails verification at entry {sequence}"
                    ),
                )),
            }
        }
    }
}

fn step_cmd(ctx: &Ctx, cmd: StepCmd) -> CliResult {
    match cmd {
        StepCmd::Set {
            exhibit,
            step,
            status,
            notes,
            justification,
        } => {
            let status: StepStatus = status.parse().map_err(Failure::validation)?;
            let rec = ctx.mutate(|case| {
                Ok(case.record_step(&exhibit, step, status, &notes, &justification, ctx.now)?)
            })?;
            ctx.emit(&rec, || {
                let mut s = format!(
                    "{} step {} ({}): {}",
                    rec.exhibit_id,
                    step,
                    step_title(step),
                    rec.status
                );
                if rec.retried_after_destructive {
                    s.push_str(" [flagged: retried after destructive extraction began]");
                }
                s
            })
        }
        StepCmd::Gate { exhibit, step } => {
            let case = ctx.load()?;
            let decision = case.check_gate(&exhibit, step)?;
            ctx.emit(&decision, || {
                if decision.allowed {
                    format!("step {step} allowed: {}", decision.reason)
                } else {
                    String::new()
                }
            })?;
            if decision.allowed {
                Ok(())
            } else {
                Err(Failure::validation(format!(
                    "GATE_BLOCKED: step {step} blocked by steps {:?}: {}",
                    decision.blocking_steps, decision.reason
                )))
            }
        }
        StepCmd::Show { exhibit } => {
            let case = ctx.load()?;
            require_exhibit(&case, &exhibit)?;
            let records: Vec<_> = (1..=STEP_COUNT)
                .filter_map(|n| case.step(&exhibit, n))
                .collect();
            ctx.emit(&records, || {
                records
                    .iter()
                    .map(|r| {
                        format!(
                            "{:>2} {:<14} {}{}\n",
                            r.step_number,
                            r.status.to_string(),
                            step_title(r.step_number),
                            if r.justification.is_empty() {
                                String::new()
                            } else {
                                format!(" ({})", r.justification)
                            }
                        )
                    })
                    .collect()
            })
        }
    }
}

fn resolve_span(image_path: &Path, span: &Span) -> CliResult<(u64, u64)> {
    match (&span.name, span.offset, span.length) {
        (Some(name), _, _) => {
            let bytes = read(image_path)?;
            let layout = fixtures::read_layout(&bytes)?;
            layout
                .into_iter()
                .find(|e| &e.name == name)
                .map(|e| (e.offset, e.length))
                .ok_or_else(|| Failure::validation(format!("{name} is not in the card table")))
        }
        (None, Some(o), Some(l)) => Ok((o, l)),
        _ => Err(Failure::validation(
            "give --name or both --offset and --length",
        )),
    }
}

fn read_span(path: &Path, offset: u64, length: u64) -> CliResult<Vec<u8>> {
    let what = || {
        format!(
            "reading {} bytes at {offset} from {}",
            length,
            path.display()
        )
    };
    let mut f = File::open(path).ctx(what())?;
    f.seek(SeekFrom::Start(offset)).ctx(what())?;
    let mut buf = vec![0u8; length as usize];
    f.read_exact(&mut buf).ctx(what())?;
    Ok(buf)
}

fn image_text(img: &StorageImage) -> String {
    format!(
        "{}: {} bytes\n  sha256 {}\n  sha1   {}\n  bad sectors: {}{}",
        img.image_path.display(),
        img.size_bytes,
        hex::encode(img.manifest.sha256),
        hex::encode(img.manifest.sha1),
        img.manifest.bad_sectors.len(),
        if img.is_clone {
            "\n  clone (writable)"
        } else {
            "\n  original (read-only)"
        }
    )
}

fn image_cmd(ctx: &Ctx, cmd: ImageCmd) -> CliResult {
    match cmd {
        ImageCmd::Acquire {
            source,
            dest,
            sector_size,
            exhibit,
            description,
        } => {
            let dest = absolute(&dest);
            let src = File::open(&source).ctx(format!("opening source {}", source.display()))?;
            let acquire = |src: File| {
                imaging::acquire(src, &dest, sector_size, ctx.now, &description)
                    .ctx(format!("acquiring {}", source.display()))
            };
            let image = match exhibit {
                Some(ex) => ctx.mutate(|case| {
                    require_exhibit(case, &ex)?;
                    let image = acquire(src)?;
                    case.record_image(&ex, image.clone())?;
                    case.append_custody(CustodyEvent {
                        actor: case.examiner.clone(),
                        action: CustodyAction::Acquired,
                        exhibit_id: ex.clone(),
                        occurred_at: ctx.now,
                        note: format!(
                            "image {} sha256 {} bad sectors {}",
                            file_name(&image.image_path),
                            hex::encode(image.manifest.sha256),
                            image.manifest.bad_sectors.len()
                        ),
                    })?;
                    Ok(image)
                })?,
                None => acquire(src)?,
            };
            ctx.emit(&image, || image_text(&image))
        }
        ImageCmd::Verify { image } => {
            let img = ctx.image(&image)?;
            let outcome = imaging::verify_image(&img)?;
            ctx.emit(&outcome, || match &outcome {
                VerifyOutcome::Ok => "OK".into(),
                VerifyOutcome::Mismatch {
                    digests,
                    actual_size,
                } => {
                    format!("MISMATCH {digests:?} (actual size {actual_size})")
                }
            })?;
            if outcome.is_ok() {
                Ok(())
            } else {
                Err(Failure::new(
                    INTEGRITY,
                    format!("{} fails verification", image.display()),
                ))
            }
        }
        ImageCmd::Clone {
            image,
            out,
            exhibit,
        } => {
            let parent = ctx.image(&image)?;
            let out = absolute(&out);
            let registered = ctx
                .case
                .as_deref()
                .and_then(|d| cf::load_case(d).ok())
                .and_then(|c| {
                    c.image_record(&parent.image_path)
                        .map(|r| r.exhibit_id.clone())
                });
            let exhibit = exhibit.or(registered);
            let (record, clone) = match &exhibit {
                Some(ex) => ctx.mutate(|case| {
                    require_exhibit(case, ex)?;
                    let (record, clone) = imaging::clone_image(&parent, &out, ctx.now)?;
                    case.record_image(ex, clone.clone())?;
                    case.append_custody(CustodyEvent {
                        actor: case.examiner.clone(),
                        action: CustodyAction::Cloned,
                        exhibit_id: ex.clone(),
                        occurred_at: ctx.now,
                        note: format!(
                            "clone {} of {} verified {}",
                            file_name(&out),
                            file_name(&parent.image_path),
                            record.verified
                        ),
                    })?;
                    Ok((record, clone))
                })?,
                None => imaging::clone_image(&parent, &out, ctx.now)?,
            };
            ctx.emit(&json!({ "record": record, "image": clone }), || {
                let mut s = format!("cloned {} -> {} (verified: {})", image.display(), out.display(), record.verified);
                if exhibit.is_none() {
                    s.push_str("\nnote: clone is not registered in a case, so log finalization will refuse it");
                }
                s
            })
        }
        ImageCmd::Diff { a, b } => {
            let ranges = imaging::diff_files(&a, &b)?;
            ctx.emit(&ranges, || {
                if ranges.is_empty() {
                    "identical".into()
                } else {
                    ranges
                        .iter()
                        .map(|r| format!("offset {} length {}\n", r.offset, r.length))
                        .collect()
                }
            })
        }
        ImageCmd::Files { image } => {
            let layout = fixtures::read_layout(&read(&image)?)?;
            let rows: Vec<_> = layout
                .iter()
                .map(|e| json!({ "name": e.name, "offset": e.offset, "length": e.length }))
                .collect();
            ctx.emit(&rows, || fixtures::layout_manifest(&layout))
        }
        ImageCmd::Extract { image, span, out } => {
            let (offset, length) = resolve_span(&image, &span)?;
            let bytes = read_span(&image, offset, length)?;
            write_new(&out, &bytes)?;
            ctx.emit(
                &json!({ "out": out, "offset": offset, "length": length }),
                || format!("extracted {length} bytes at {offset} to {}", out.display()),
            )
        }
    }
}

fn log_json(file: &Path, log: &FlightLog, frames: bool) -> serde_json::Value {
    let counts = summarize(log).frame_counts;
    let mut v = json!({
        "file": file,
        "closed": log.closed,
        "header": {
            "version": log.header.version,
            "device_id": hex::encode(log.header.device_id),
            "created_at_ms": log.header.created_at_ms,
        },
        "frame_count": log.frames.len(),
        "frame_counts": counts,
        "recovery": log.recovery,
        "timestamp_regressions": log.timestamp_regressions,
    });
    if frames {
        v["frames"] = json!(log.frames);
    }
    v
}

fn counts_text(log: &FlightLog) -> String {
    let c = summarize(log).frame_counts;
    RecordType::ALL
        .iter()
        .map(|t| format!("{} {}", t.name(), c.get(*t)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn strict(file: &Path, bytes: &[u8]) -> CliResult<FlightLog> {
    parse_strict(bytes).map_err(|e| {
        let hint = if matches!(e, ParseError::MissingFooter { .. }) {
            format!(
                "\nhint: the log was never closed; run `dronetrace log recover {}` to salvage its frames",
                file.display()
            )
        } else {
            String::new()
        };
        Failure::validation(format!("{}: {e}{hint}", file.display()))
    })
}

fn log_cmd(ctx: &Ctx, cmd: LogCmd) -> CliResult {
    match cmd {
        LogCmd::Parse { file, frames } => {
            let log = strict(&file, &read(&file)?)?;
            ctx.emit(&log_json(&file, &log, frames), || {
                format!(
                    "{}: closed, {} frames ({})",
                    file.display(),
                    log.frames.len(),
                    counts_text(&log)
                )
            })
        }
        LogCmd::Recover { file, frames } => {
            let log = parse_recover(&read(&file)?);
            ctx.emit(&log_json(&file, &log, frames), || {
                let r = log.recovery.as_ref();
                format!(
                    "{}: recovered {} frames ({}); dropped runs {}; trailing garbage {}; header synthesized {}; closed {}",
                    file.display(),
                    log.frames.len(),
                    counts_text(&log),
                    r.map_or(0, |r| r.frames_dropped),
                    r.is_some_and(|r| r.trailing_garbage),
                    r.is_some_and(|r| r.header_synthesized),
                    log.closed
                )
            })
        }
        LogCmd::Finalize {
            clone,
            span,
            out,
            write_back,
        } => {
            let mut image = ctx.image(&clone)?;
            let (offset, length) = resolve_span(&image.image_path, &span)?;
            let bytes = read_span(&image.image_path, offset, length)?;
            let finalized = finalize_log(&image, &bytes)?;
            write_new(&out, &finalized)?;
            let frames = parse_strict(&finalized)
                .map(|l| l.frames.len())
                .unwrap_or(0);
            if write_back {
                ctx.mutate(|case| {
                    let ex = case
                        .image_record(&image.image_path)
                        .map(|r| r.exhibit_id.clone())
                        .ok_or_else(|| {
                            Failure::validation("clone is not registered in this case")
                        })?;
                    imaging::write_into_clone(&mut image, offset, &finalized, ctx.now)?;
                    case.record_image(&ex, image.clone())?;
                    Ok(())
                })?;
            }
            ctx.emit(
                &json!({ "out": out, "frames": frames, "bytes": finalized.len(), "written_back": write_back }),
                || {
                    format!(
                        "finalized log with {frames} frames -> {} ({} bytes){}",
                        out.display(),
                        finalized.len(),
                        if write_back { "; written back into the clone" } else { "" }
                    )
                },
            )
        }
        LogCmd::Summary { file, out } => {
            let summary = summarize(&parse_recover(&read(&file)?));
            if let Some(out) = &out {
                let mut bytes = serde_json::to_vec_pretty(&summary)?;
                bytes.push(b'\n');
                write(out, &bytes)?;
            }
            ctx.emit(&summary, || {
                let mut s = format!(
                    "{}: duration {} ms, {} frames, {} GPS fixes",
                    file.display(),
                    summary.duration_ms,
                    summary.frame_counts.total(),
                    summary.gps_fix_count
                );
                if let Some(b) = &summary.bounding_box {
                    s.push_str(&format!(
                        "\n  bbox lat {:.7}..{:.7} lon {:.7}..{:.7}",
                        b.min_lat, b.max_lat, b.min_lon, b.max_lon
                    ));
                }
                if let Some(a) = summary.max_alt_m {
                    s.push_str(&format!("\n  max altitude {a:.3} m"));
                }
                if let (Some(a), Some(b)) = (summary.battery_start_pct, summary.battery_end_pct) {
                    s.push_str(&format!("\n  battery {a}% -> {b}%"));
                }
                s
            })
        }
    }
}

fn signatures(path: Option<&Path>) -> CliResult<Vec<Signature>> {
    match path {
        None => Ok(Signature::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).ctx(format!("reading {}", p.display()))?;
            Ok(carving::parse_signature_file(&text)?)
        }
    }
}

fn carve_cmd(ctx: &Ctx, cmd: CarveCmd) -> CliResult {
    match cmd {
        CarveCmd::Scan {
            image,
            signatures: sig_path,
        } => {
            let sigs = signatures(sig_path.as_deref())?;
            let img = ctx.verified_image(&image)?;
            let hits = carving::scan_signatures(&img, &sigs)?;
            ctx.emit(&hits, || {
                hits.iter()
                    .map(|h| format!("{} {}\n", h.offset, h.signature_name))
                    .collect()
            })
        }
        CarveCmd::Run {
            image,
            out,
            signatures: sig_path,
            exhibit,
        } => {
            let sigs = signatures(sig_path.as_deref())?;
            let img = ctx.verified_image(&image)?;
            let files = carving::carve(&img, &sigs, &out)?;
            let mut items = Vec::new();
            if let Some(ex) = &exhibit {
                items = ctx.mutate(|case| {
                    let mut items = Vec::new();
                    for f in &files {
                        items.push(case.register_evidence(NewEvidence {
                            kind: EvidenceKind::CarvedMedia,
                            source_exhibit: ex.clone(),
                            source_image: Some(img.image_path.clone()),
                            producing_operation: format!(
                                "carve {} at offset {}{}",
                                f.signature_name,
                                f.offset,
                                if f.terminated { "" } else { " (unterminated)" }
                            ),
                            artifact_path: absolute(&f.output_path),
                            relevance_note: String::new(),
                            derived_from: None,
                        })?);
                    }
                    Ok(items)
                })?;
            }
            ctx.emit(&json!({ "carved": files, "registered": items }), || {
                files
                    .iter()
                    .map(|f| {
                        format!(
                            "{} {} bytes -> {}{}\n",
                            f.offset,
                            f.length,
                            f.output_path.display(),
                            if f.terminated { "" } else { " [unterminated]" }
                        )
                    })
                    .collect()
            })
        }
    }
}

fn export_cmd(ctx: &Ctx, cmd: ExportCmd) -> CliResult {
    let (args, kml) = match cmd {
        ExportCmd::Csv(a) => (a, false),
        ExportCmd::Kml(a) => (a, true),
    };
    let ExportArgs {
        log: path,
        out,
        recover,
        exhibit,
        derived_from,
        image,
    } = args;
    let bytes = read(&path)?;
    let log = if recover {
        parse_recover(&bytes)
    } else {
        strict(&path, &bytes)?
    };
    let (data, count, unit) = if kml {
        let n = export::kml_coordinates(&log).len();
        (export::to_kml(&log, &file_name(&path)), n, "coordinates")
    } else {
        (export::to_csv(&log), log.frames.len(), "rows")
    };
    write(&out, &data)?;
    let item = match exhibit {
        Some(ex) => Some(ctx.mutate(|case| {
            Ok(case.register_evidence(NewEvidence {
                kind: EvidenceKind::Export,
                source_exhibit: ex,
                source_image: image.as_deref().map(absolute),
                producing_operation: format!(
                    "export {} from {}{}",
                    if kml { "kml" } else { "csv" },
                    file_name(&path),
                    if recover { " (recovery parser)" } else { "" }
                ),
                artifact_path: absolute(&out),
                relevance_note: String::new(),
                derived_from,
            })?)
        })?),
        None => None,
    };
    ctx.emit(
        &json!({ "out": out, unit: count, "registered": item }),
        || format!("wrote {count} {unit} to {}", out.display()),
    )
}

fn evidence_cmd(ctx: &Ctx, cmd: EvidenceCmd) -> CliResult {
    match cmd {
        EvidenceCmd::Add {
            kind,
            exhibit,
            artifact,
            operation,
            image,
            note,
            derived_from,
        } => {
            let kind: EvidenceKind = kind.parse().map_err(Failure::validation)?;
            let item = ctx.mutate(|case| {
                Ok(case.register_evidence(NewEvidence {
                    kind,
                    source_exhibit: exhibit,
                    source_image: image.as_deref().map(absolute),
                    producing_operation: operation,
                    artifact_path: absolute(&artifact),
                    relevance_note: note,
                    derived_from,
                })?)
            })?;
            ctx.emit(&item, || {
                format!(
                    "registered {} {} sha256 {}",
                    item.item_id,
                    item.kind.name(),
                    hex::encode(item.content_digest)
                )
            })
        }
        EvidenceCmd::Sift {
            kind,
            exhibit,
            operation,
        } => {
            let kind: Option<EvidenceKind> = kind
                .map(|k| k.parse())
                .transpose()
                .map_err(Failure::validation)?;
            let case = ctx.load()?;
            let items = report::sift(&case, |i| {
                kind.is_none_or(|k| i.kind == k)
                    && exhibit.as_deref().is_none_or(|e| i.source_exhibit == e)
                    && operation
                        .as_deref()
                        .is_none_or(|o| i.producing_operation.contains(o))
            });
            ctx.emit(&items, || {
                items
                    .iter()
                    .map(|i| {
                        format!(
                            "{} {} {} {} ({})\n",
                            i.item_id,
                            i.kind.name(),
                            i.source_exhibit,
                            i.artifact_path.display(),
                            i.producing_operation
                        )
                    })
                    .collect()
            })
        }
        EvidenceCmd::Confirm { item, all } => {
            let results = ctx.mutate(|case| {
                let targets: Vec<_> = if all {
                    case.evidence().to_vec()
                } else {
                    let id = item.unwrap_or_default();
                    vec![case
                        .evidence_item(&id)
                        .cloned()
                        .ok_or(report::ReportError::UnknownItem(id))?]
                };
                let mut results = Vec::new();
                for t in &targets {
                    let r = report::confirm(case, t)?;
                    case.record_confirmation(r.clone())?;
                    results.push(r);
                }
                Ok(results)
            })?;
            ctx.emit(&results, || {
                results
                    .iter()
                    .map(|r| {
                        format!(
                            "{} {} {}: {}\n",
                            r.item_id,
                            r.method.name(),
                            if r.agreed { "AGREED" } else { "FLAGGED" },
                            r.detail
                        )
                    })
                    .collect()
            })?;
            // Results are already recorded; a disagreement is still an
            // integrity failure for the caller.
            let flagged: Vec<&str> = results
                .iter()
                .filter(|r| !r.agreed)
                .map(|r| r.item_id.as_str())
                .collect();
            if flagged.is_empty() {
                Ok(())
            } else {
                Err(Failure::new(
                    INTEGRITY,
                    format!("confirmation failed for {}", flagged.join(", ")),
                ))
            }
        }
    }
}

fn report_cmd(ctx: &Ctx, cmd: ReportCmd) -> CliResult {
    let ReportCmd::Render {
        conclusions,
        conclusions_file,
        out,
    } = cmd;
    let conclusions = match (conclusions, conclusions_file) {
        (Some(c), _) => c,
        (None, Some(p)) => fs::read_to_string(&p).ctx(format!("reading {}", p.display()))?,
        (None, None) => return Err(Failure::validation("conclusions are required")),
    };
    let case = ctx.load()?;
    let out = match out {
        Some(p) => p,
        None => ctx.case_dir()?.join(REPORT_FILE),
    };
    let doc = report::render_report(&case, &conclusions, ctx.now, &out)?;
    ctx.emit(
        &json!({ "out": out, "flagged_items": doc.flagged_items, "sections": doc.sections }),
        || {
            format!(
                "wrote {} ({} items flagged)",
                out.display(),
                doc.flagged_items.len()
            )
        },
    )
}

fn fixture_cmd(ctx: &Ctx, cmd: FixtureCmd) -> CliResult {
    match cmd {
        FixtureCmd::Flight {
            seed,
            duration,
            rate,
            out,
            unclosed,
        } => {
            let frames = fixtures::synth_flight(seed, duration, rate)?;
            let bytes = generate(&fixtures::synth_header(seed), &frames, !unclosed)?;
            write(&out, &bytes)?;
            ctx.emit(
                &json!({ "out": out, "frames": frames.len(), "bytes": bytes.len() }),
                || {
                    format!(
                        "wrote {} frames ({} bytes) to {}",
                        frames.len(),
                        bytes.len(),
                        out.display()
                    )
                },
            )
        }
        FixtureCmd::Card {
            out,
            case_study,
            seed,
            log,
            media,
            size,
            unclosed_last,
        } => {
            let card = if case_study {
                fixtures::case_study_card(seed)?.card
            } else {
                let load = |paths: &[PathBuf]| -> CliResult<Vec<(String, Vec<u8>)>> {
                    paths.iter().map(|p| Ok((file_name(p), read(p)?))).collect()
                };
                fixtures::pack_card(&load(&log)?, &load(&media)?, size, unclosed_last)?
            };
            write(&out, &card.image)?;
            let manifest = fixtures::layout_manifest(&card.layout);
            let layout_path = PathBuf::from(format!("{}.layout", out.display()));
            write(&layout_path, manifest.as_bytes())?;
            let rows: Vec<_> = card
                .layout
                .iter()
                .map(|e| json!({ "name": e.name, "offset": e.offset, "length": e.length }))
                .collect();
            ctx.emit(&json!({ "out": out, "layout": rows }), || {
                format!(
                    "wrote {} ({} bytes)\n{manifest}",
                    out.display(),
                    card.image.len()
                )
            })
        }
    }
}
