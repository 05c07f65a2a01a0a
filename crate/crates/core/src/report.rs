//! Evidence registry, sifting, independent-path confirmation and the final
//! report.
//!
//! Every registered item points at an artifact on disk and carries the
//! SHA-256 of that artifact at registration time. The report is a pure
//! function of case state, the examiner's conclusions and an injected
//! `generated_at`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casefile::{
    step_title, CaseError, CaseFile, GateDecision, LedgerStatus, RegisteredSummary, StepStatus,
    REPORT_STEP, STEP_COUNT,
};
use crate::digest::{hex_bytes, sha256, Sha256Digest};
use crate::flightlog::{parse_recover, parse_strict, summarize, FlightSummary};

pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvidenceKind {
    FlightLog,
    CarvedMedia,
    Summary,
    Export,
}

impl EvidenceKind {
    pub fn name(self) -> &'static str {
        match self {
            EvidenceKind::FlightLog => "FLIGHT_LOG",
            EvidenceKind::CarvedMedia => "CARVED_MEDIA",
            EvidenceKind::Summary => "SUMMARY",
            EvidenceKind::Export => "EXPORT",
        }
    }
}

impl std::str::FromStr for EvidenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        [
            EvidenceKind::FlightLog,
            EvidenceKind::CarvedMedia,
            EvidenceKind::Summary,
            EvidenceKind::Export,
        ]
        .into_iter()
        .find(|k| k.name() == norm)
        .ok_or_else(|| format!("unknown evidence kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub item_id: String,
    pub kind: EvidenceKind,
    pub source_exhibit: String,
    pub source_image: Option<PathBuf>,
    pub producing_operation: String,
    #[serde(with = "hex_bytes")]
    pub content_digest: Sha256Digest,
    pub relevance_note: String,
    pub artifact_path: PathBuf,
    /// Item this one was computed from, e.g. the log behind a summary.
    #[serde(default)]
    pub derived_from: Option<String>,
}

/// What a caller supplies to register an artifact; id and digest are filled
/// in by the registry.
#[derive(Debug, Clone)]
pub struct NewEvidence {
    pub kind: EvidenceKind,
    pub source_exhibit: String,
    pub source_image: Option<PathBuf>,
    pub producing_operation: String,
    pub artifact_path: PathBuf,
    pub relevance_note: String,
    pub derived_from: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConfirmMethod {
    StrictVsRecover,
    Rehash,
    Reparse,
}

impl ConfirmMethod {
    pub fn name(self) -> &'static str {
        match self {
            ConfirmMethod::StrictVsRecover => "STRICT_VS_RECOVER",
            ConfirmMethod::Rehash => "REHASH",
            ConfirmMethod::Reparse => "REPARSE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmationResult {
    pub item_id: String,
    pub method: ConfirmMethod,
    pub agreed: bool,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("MISSING_ARTIFACT: {path}: {source}")]
    MissingArtifact {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("UNKNOWN_ITEM: {0}")]
    UnknownItem(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("GATE_BLOCKED: exhibit {exhibit_id}: {}", .decision.reason)]
    GateBlocked {
        exhibit_id: String,
        decision: GateDecision,
    },
    #[error("LEDGER_TAMPERED: custody ledger fails verification at entry {0}")]
    LedgerTampered(u64),
    #[error("WRITE_FAILURE: {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn read_artifact(path: &Path) -> Result<Vec<u8>, ReportError> {
    fs::read(path).map_err(|source| ReportError::MissingArtifact {
        path: path.to_owned(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl CaseFile {
    pub fn evidence_item(&self, item_id: &str) -> Option<&EvidenceItem> {
        self.evidence().iter().find(|i| i.item_id == item_id)
    }

    pub fn confirmation(&self, item_id: &str) -> Option<&ConfirmationResult> {
        self.confirmations().iter().find(|c| c.item_id == item_id)
    }

    /// Hashes the artifact and appends it to the registry. Flight logs also
    /// get a summary computed through the recovery parser, which accepts
    /// both closed and unclosed files.
    pub fn register_evidence(&mut self, new: NewEvidence) -> Result<EvidenceItem, ReportError> {
        if self.exhibit(&new.source_exhibit).is_none() {
            return Err(CaseError::UnknownExhibit(new.source_exhibit).into());
        }
        if let Some(parent) = &new.derived_from {
            if self.evidence_item(parent).is_none() {
                return Err(ReportError::UnknownItem(parent.clone()));
            }
        }
        let bytes = read_artifact(&new.artifact_path)?;
        let item = EvidenceItem {
            item_id: format!("EV-{:03}", self.evidence().len() + 1),
            kind: new.kind,
            source_exhibit: new.source_exhibit,
            source_image: new.source_image,
            producing_operation: new.producing_operation,
            content_digest: sha256(&bytes),
            relevance_note: new.relevance_note,
            artifact_path: new.artifact_path,
            derived_from: new.derived_from,
        };
        if item.kind == EvidenceKind::FlightLog {
            self.push_summary(RegisteredSummary {
                item_id: item.item_id.clone(),
                source_name: file_label(&item.artifact_path),
                summary: summarize(&parse_recover(&bytes)),
            });
        }
        self.push_evidence(item.clone());
        Ok(item)
    }

    /// Stores a confirmation, replacing any earlier one for the same item.
    pub fn record_confirmation(&mut self, result: ConfirmationResult) -> Result<(), ReportError> {
        if self.evidence_item(&result.item_id).is_none() {
            return Err(ReportError::UnknownItem(result.item_id));
        }
        self.push_confirmation(result);
        Ok(())
    }
}

/// Registry subset matching `filter`, in registration order.
pub fn sift<F>(case: &CaseFile, filter: F) -> Vec<EvidenceItem>
where
    F: Fn(&EvidenceItem) -> bool,
{
    case.evidence()
        .iter()
        .filter(|i| filter(i))
        .cloned()
        .collect()
}

/// Re-derives an item along an independent path and reports agreement.
pub fn confirm(case: &CaseFile, item: &EvidenceItem) -> Result<ConfirmationResult, ReportError> {
    let bytes = read_artifact(&item.artifact_path)?;
    let actual = sha256(&bytes);
    let digest_detail = || {
        format!(
            "digest mismatch: registered {}, on disk {}",
            hex::encode(item.content_digest),
            hex::encode(actual)
        )
    };
    let (method, agreed, detail) = match item.kind {
        EvidenceKind::CarvedMedia | EvidenceKind::Export => {
            if actual == item.content_digest {
                (
                    ConfirmMethod::Rehash,
                    true,
                    format!("digest {} re-verified", hex::encode(actual)),
                )
            } else {
                (ConfirmMethod::Rehash, false, digest_detail())
            }
        }
        EvidenceKind::FlightLog => {
            let method = ConfirmMethod::StrictVsRecover;
            if actual != item.content_digest {
                (method, false, digest_detail())
            } else {
                let recovered = parse_recover(&bytes);
                match parse_strict(&bytes) {
                    Ok(strict) if strict.frames == recovered.frames => (
                        method,
                        true,
                        format!(
                            "strict and recovery parsers agree on {} frames",
                            strict.frames.len()
                        ),
                    ),
                    Ok(strict) => (
                        method,
                        false,
                        format!(
                            "strict parser read {} frames, recovery parser {}",
                            strict.frames.len(),
                            recovered.frames.len()
                        ),
                    ),
                    Err(e) => (
                        method,
                        false,
                        format!(
                            "strict parse failed with {} ({e}); recovery parser read {} frames",
                            e.code(),
                            recovered.frames.len()
                        ),
                    ),
                }
            }
        }
        EvidenceKind::Summary => confirm_summary(case, item, &bytes, actual),
    };
    Ok(ConfirmationResult {
        item_id: item.item_id.clone(),
        method,
        agreed,
        detail,
    })
}

fn confirm_summary(
    case: &CaseFile,
    item: &EvidenceItem,
    bytes: &[u8],
    actual: Sha256Digest,
) -> (ConfirmMethod, bool, String) {
    let method = ConfirmMethod::Reparse;
    if actual != item.content_digest {
        return (
            method,
            false,
            format!(
                "digest mismatch: registered {}",
                hex::encode(item.content_digest)
            ),
        );
    }
    let stored: FlightSummary = match serde_json::from_slice(bytes) {
        Ok(s) => s,
        Err(e) => {
            return (
                method,
                false,
                format!("summary artifact is not readable: {e}"),
            )
        }
    };
    let Some(source) = item
        .derived_from
        .as_deref()
        .and_then(|id| case.evidence_item(id))
    else {
        return (method, false, "summary has no source log item".to_owned());
    };
    let log_bytes = match fs::read(&source.artifact_path) {
        Ok(b) => b,
        Err(e) => {
            return (
                method,
                false,
                format!(
                    "source log {} unreadable: {e}",
                    source.artifact_path.display()
                ),
            )
        }
    };
    let fresh = summarize(&parse_recover(&log_bytes));
    if fresh == stored {
        (
            method,
            true,
            format!(
                "re-summarizing {} reproduces the stored summary",
                source.item_id
            ),
        )
    } else {
        (
            method,
            false,
            format!(
                "re-summarizing {} differs from the stored summary",
                source.item_id
            ),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub title: String,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub case_id: String,
    pub generated_at: DateTime<Utc>,
    pub sections: Vec<ReportSection>,
    /// Items whose confirmation disagreed, or which were never confirmed.
    pub flagged_items: Vec<String>,
}

impl ReportDocument {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, section) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "== {} ==", section.title);
            for line in &section.lines {
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    pub fn section(&self, title: &str) -> Option<&ReportSection> {
        self.sections.iter().find(|s| s.title == title)
    }
}

fn ts(at: &DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| v.to_string())
}

/// Builds the report without touching disk. Fails unless the ledger
/// verifies and, for every exhibit, steps 1 to 20 are terminal.
pub fn build_report(
    case: &CaseFile,
    conclusions: &str,
    generated_at: DateTime<Utc>,
) -> Result<ReportDocument, ReportError> {
    if let LedgerStatus::Tampered { sequence } = case.verify_ledger() {
        return Err(ReportError::LedgerTampered(sequence));
    }
    for exhibit in case.exhibits() {
        let id = &exhibit.exhibit_id;
        let mut decision = case.check_gate(id, REPORT_STEP)?;
        let own = case
            .step(id, REPORT_STEP)
            .map_or(StepStatus::Pending, |r| r.status);
        if !own.is_terminal() {
            decision.allowed = false;
            decision.blocking_steps.push(REPORT_STEP);
            decision.reason = format!("{}; step 20 itself is {own}", decision.reason);
        }
        if !decision.allowed {
            return Err(ReportError::GateBlocked {
                exhibit_id: id.clone(),
                decision,
            });
        }
    }

    let mut sections = Vec::new();

    let mut header = vec![
        format!("case_id: {}", case.case_id),
        format!("examiner: {}", case.examiner),
        format!("created_at: {}", ts(&case.created_at)),
        format!("generated_at: {}", ts(&generated_at)),
    ];
    if let Some(o) = &case.offence {
        header.push(format!("offence: {}", o.offence));
        header.push(format!("alleged_role: {}", o.alleged_role));
        header.push(format!("evidence_targets: {}", o.evidence_targets));
    }
    sections.push(ReportSection {
        title: "CASE".into(),
        lines: header,
    });

    let mut exhibits = Vec::new();
    for e in case.exhibits() {
        exhibits.push(format!("[{}] kind={}", e.exhibit_id, serde_plain(&e.kind)));
        if let Some(p) = &e.parent_exhibit {
            exhibits.push(format!("  sub-exhibit of: {p}"));
        }
        if !e.description.is_empty() {
            exhibits.push(format!("  description: {}", e.description));
        }
        if let Some(i) = &e.identification {
            exhibits.push(format!("  make/model: {} {}", i.make, i.model));
            if !i.serial_or_qr.is_empty() {
                exhibits.push(format!("  serial: {}", i.serial_or_qr));
            }
            if let Some((w, d)) = i.dimensions_mm {
                exhibits.push(format!("  dimensions: {w}x{d} mm"));
            }
        }
        if let Some(s) = &e.seizure {
            exhibits.push(format!(
                "  seized: {} at {} by {}, seal {}",
                ts(&s.seized_when),
                s.seized_where,
                s.seizing_officer,
                s.unique_seal_number
            ));
        }
        for m in &e.modifications {
            exhibits.push(format!(
                "  modification: {} {}{}",
                serde_plain(&m.category),
                m.description,
                if m.standard_part {
                    " (standard part)"
                } else {
                    ""
                }
            ));
        }
        for s in &e.storage_locations {
            exhibits.push(format!(
                "  storage: {} accessible={}{}",
                serde_plain(&s.medium),
                s.accessible,
                s.removed_as_sub_exhibit
                    .as_deref()
                    .map(|x| format!(" removed as {x}"))
                    .unwrap_or_default()
            ));
        }
        for p in &e.ports {
            exhibits.push(format!("  port: {}", serde_plain(&p.port_type)));
        }
        exhibits.push(format!("  photographs: {}", e.photographs.len()));
        for img in case
            .images()
            .iter()
            .filter(|r| r.exhibit_id == e.exhibit_id)
        {
            exhibits.push(format!(
                "  image: {} size={} sha256={} clone={} bad_sectors={}",
                img.image.image_path.display(),
                img.image.size_bytes,
                hex::encode(img.image.manifest.sha256),
                img.image.is_clone,
                img.image.manifest.bad_sectors.len()
            ));
        }
    }
    sections.push(ReportSection {
        title: "EXHIBITS".into(),
        lines: exhibits,
    });

    let mut workflow = Vec::new();
    for e in case.exhibits() {
        workflow.push(format!("[{}]", e.exhibit_id));
        for n in 1..=STEP_COUNT {
            let Some(r) = case.step(&e.exhibit_id, n) else {
                continue;
            };
            let mut line = format!("  {n:>2} {:<14} {}", r.status.to_string(), step_title(n));
            if !r.justification.is_empty() {
                let _ = write!(line, " | justification: {}", r.justification);
            }
            if !r.notes.is_empty() {
                let _ = write!(line, " | notes: {}", r.notes);
            }
            if r.retried_after_destructive {
                line.push_str(" | FLAG: retried after destructive extraction began");
            }
            workflow.push(line);
        }
    }
    sections.push(ReportSection {
        title: "WORKFLOW".into(),
        lines: workflow,
    });

    let mut ledger = vec![format!(
        "verification: OK ({} entries)",
        case.ledger().len()
    )];
    for entry in case.ledger() {
        ledger.push(format!(
            "  #{} {} {} {} by {} digest={}{}",
            entry.sequence,
            ts(&entry.event.occurred_at),
            entry.event.action.name(),
            entry.event.exhibit_id,
            entry.event.actor,
            hex::encode(entry.entry_digest),
            if entry.event.note.is_empty() {
                String::new()
            } else {
                format!(" note: {}", entry.event.note)
            }
        ));
    }
    sections.push(ReportSection {
        title: "CUSTODY LEDGER".into(),
        lines: ledger,
    });

    let mut evidence = Vec::new();
    let mut flagged = Vec::new();
    for item in case.evidence() {
        evidence.push(format!(
            "[{}] {} {}",
            item.item_id,
            item.kind.name(),
            file_label(&item.artifact_path)
        ));
        evidence.push(format!("  exhibit: {}", item.source_exhibit));
        evidence.push(format!(
            "  image: {}",
            opt(item.source_image.as_ref().map(|p| p.display().to_string()))
        ));
        evidence.push(format!("  operation: {}", item.producing_operation));
        evidence.push(format!("  sha256: {}", hex::encode(item.content_digest)));
        evidence.push(format!("  artifact: {}", item.artifact_path.display()));
        if let Some(d) = &item.derived_from {
            evidence.push(format!("  derived from: {d}"));
        }
        if !item.relevance_note.is_empty() {
            evidence.push(format!("  relevance: {}", item.relevance_note));
        }
        match case.confirmation(&item.item_id) {
            Some(c) if c.agreed => evidence.push(format!(
                "  confirmation: AGREED via {} ({})",
                c.method.name(),
                c.detail
            )),
            Some(c) => {
                flagged.push(item.item_id.clone());
                evidence.push(format!(
                    "  confirmation: FLAGGED via {} ({})",
                    c.method.name(),
                    c.detail
                ))
            }
            None => {
                flagged.push(item.item_id.clone());
                evidence.push("  confirmation: FLAGGED (not confirmed)".to_owned())
            }
        }
    }
    let exports: Vec<&EvidenceItem> = case
        .evidence()
        .iter()
        .filter(|i| i.kind == EvidenceKind::Export)
        .collect();
    if !exports.is_empty() {
        evidence.push("export artifacts:".to_owned());
        for item in exports {
            evidence.push(format!(
                "  {} -> {}",
                item.item_id,
                item.artifact_path.display()
            ));
        }
    }
    sections.push(ReportSection {
        title: "EVIDENCE".into(),
        lines: evidence,
    });

    let mut summaries = Vec::new();
    for s in case.flight_summaries() {
        summaries.push(summary_line(s));
    }
    sections.push(ReportSection {
        title: "FLIGHT SUMMARIES".into(),
        lines: summaries,
    });

    let mut concl = vec![format!(
        "The following conclusions are those of the examiner, {}:",
        case.examiner
    )];
    concl.extend(conclusions.lines().map(str::to_owned));
    sections.push(ReportSection {
        title: "CONCLUSIONS".into(),
        lines: concl,
    });

    Ok(ReportDocument {
        case_id: case.case_id.clone(),
        generated_at,
        sections,
        flagged_items: flagged,
    })
}

fn summary_line(s: &RegisteredSummary) -> String {
    let m = &s.summary;
    let c = &m.frame_counts;
    let mut line = format!(
        "[{}] {}: duration_ms={} frames={} (gps={} motor={} battery={} attitude={} event={}) gps_fixes={}",
        s.item_id,
        s.source_name,
        m.duration_ms,
        c.total(),
        c.gps,
        c.motor,
        c.battery,
        c.attitude,
        c.event,
        m.gps_fix_count
    );
    if let Some(b) = &m.bounding_box {
        let _ = write!(
            line,
            " bbox=[{:.7},{:.7}]..[{:.7},{:.7}]",
            b.min_lat, b.min_lon, b.max_lat, b.max_lon
        );
    }
    if let Some(a) = m.max_alt_m {
        let _ = write!(line, " max_alt_m={a:.3}");
    }
    let _ = write!(
        line,
        " battery_pct={}->{} max_rpm={}",
        opt(m.battery_start_pct),
        opt(m.battery_end_pct),
        opt(m.max_motor_rpm)
    );
    line
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".to_owned(),
    }
}

/// Builds the report and writes it to `out_path`.
pub fn render_report(
    case: &CaseFile,
    conclusions: &str,
    generated_at: DateTime<Utc>,
    out_path: &Path,
) -> Result<ReportDocument, ReportError> {
    let doc = build_report(case, conclusions, generated_at)?;
    let tmp = out_path.with_extension("txt.tmp");
    let write = fs::write(&tmp, doc.to_text()).and_then(|_| fs::rename(&tmp, out_path));
    write.map_err(|source| ReportError::WriteFailure {
        path: out_path.to_owned(),
        source,
    })?;
    Ok(doc)
}
