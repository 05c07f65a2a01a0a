//! Cases, exhibits and the custody ledger.
//!
//! A [`CaseFile`] holds every exhibit seized for an investigation, a
//! hash-chained custody ledger, and one [`StepRecord`] per exhibit for each
//! of the twenty examination steps. Timestamps are always supplied by the
//! caller.

mod exhibit;
mod ledger;
mod store;
mod workflow;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flightlog::FlightSummary;
use crate::imaging::StorageImage;
use crate::report::{ConfirmationResult, EvidenceItem};

pub use exhibit::{
    CapabilityChecklist, Exhibit, ExhibitKind, IdentificationRecord, ModificationCategory,
    ModificationRecord, PhotoCategory, PhotoRecord, PortRecord, PortType, SeizureRecord,
    StorageLocation, StorageMedium, TriState,
};
pub use ledger::{
    canonical_bytes, decode_record, entry_digest, verify_entries, verify_records, CustodyAction,
    CustodyEvent, LedgerEntry, LedgerStatus,
};
pub use store::{
    create_case_at, load_case, save_case, CaseLock, CaseStore, StoreError, CASE_DOCUMENT, CASE_LOCK,
};
pub use workflow::{
    stage_of, step_title, GateDecision, Stage, StageCount, StageSummary, StepRecord, StepStatus,
    StepTransition, DESTRUCTIVE_STEP, REPORT_STEP, STEP_COUNT,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaseError {
    #[error("EMPTY_FIELD: {0} must not be empty")]
    EmptyField(&'static str),
    #[error("DUPLICATE_CASE_ID: {0}")]
    DuplicateCaseId(String),
    #[error("DUPLICATE_EXHIBIT_ID: {0}")]
    DuplicateExhibitId(String),
    #[error("DANGLING_PARENT: {0} does not name an exhibit in this case")]
    DanglingParent(String),
    #[error("UNKNOWN_EXHIBIT: {0}")]
    UnknownExhibit(String),
    #[error("TIME_REGRESSION: {attempted} is earlier than the ledger tail {last}")]
    TimeRegression {
        last: DateTime<Utc>,
        attempted: DateTime<Utc>,
    },
    #[error("INVALID_DESCRIPTOR: {0}")]
    InvalidDescriptor(String),
    #[error("INVALID_STEP: {0} is not in 1..=20")]
    InvalidStep(u8),
    #[error("ILLEGAL_TRANSITION: step {step} cannot move from {from} to {to}")]
    IllegalTransition {
        step: u8,
        from: StepStatus,
        to: StepStatus,
    },
    #[error("MISSING_JUSTIFICATION: step {0} cannot be NOT_APPLICABLE without a justification")]
    MissingJustification(u8),
    #[error("GATE_BLOCKED: {}", .0.reason)]
    GateBlocked(GateDecision),
    #[error("CHECKLIST_INCOMPLETE: exhibit {0} has unanswered capability questions")]
    ChecklistIncomplete(String),
}

/// Offence context captured at step 3. Free text by design: the elements of
/// proof differ per offence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffenceContext {
    pub offence: String,
    pub alleged_role: String,
    pub evidence_targets: String,
}

/// An image registered against an exhibit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub exhibit_id: String,
    pub image: StorageImage,
}

/// Flight summary computed when a log was registered as evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredSummary {
    pub item_id: String,
    pub source_name: String,
    pub summary: FlightSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub case_id: String,
    pub examiner: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub offence: Option<OffenceContext>,
    exhibits: Vec<Exhibit>,
    ledger: Vec<LedgerEntry>,
    step_records: Vec<StepRecord>,
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    evidence: Vec<EvidenceItem>,
    #[serde(default)]
    confirmations: Vec<ConfirmationResult>,
    #[serde(default)]
    flight_summaries: Vec<RegisteredSummary>,
}

impl CaseFile {
    /// An empty case. Uniqueness of `case_id` is enforced by [`CaseStore`].
    pub fn new(
        case_id: &str,
        examiner: &str,
        created_at: DateTime<Utc>,
    ) -> Result<Self, CaseError> {
        if case_id.trim().is_empty() {
            return Err(CaseError::EmptyField("case_id"));
        }
        if examiner.trim().is_empty() {
            return Err(CaseError::EmptyField("examiner"));
        }
        Ok(Self {
            case_id: case_id.to_owned(),
            examiner: examiner.to_owned(),
            created_at,
            offence: None,
            exhibits: Vec::new(),
            ledger: Vec::new(),
            step_records: Vec::new(),
            images: Vec::new(),
            evidence: Vec::new(),
            confirmations: Vec::new(),
            flight_summaries: Vec::new(),
        })
    }

    pub fn exhibits(&self) -> &[Exhibit] {
        &self.exhibits
    }

    pub fn exhibit(&self, exhibit_id: &str) -> Option<&Exhibit> {
        self.exhibits.iter().find(|e| e.exhibit_id == exhibit_id)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn step_records(&self) -> &[StepRecord] {
        &self.step_records
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn evidence(&self) -> &[EvidenceItem] {
        &self.evidence
    }

    pub fn confirmations(&self) -> &[ConfirmationResult] {
        &self.confirmations
    }

    pub fn flight_summaries(&self) -> &[RegisteredSummary] {
        &self.flight_summaries
    }

    fn require_exhibit(&self, exhibit_id: &str) -> Result<&Exhibit, CaseError> {
        self.exhibit(exhibit_id)
            .ok_or_else(|| CaseError::UnknownExhibit(exhibit_id.to_owned()))
    }

    /// Attaches a seized item. Creates its twenty PENDING step records and,
    /// when the seizure record is filled in, a SEIZED custody entry.
    pub fn add_exhibit(&mut self, descriptor: Exhibit) -> Result<String, CaseError> {
        if self.exhibit(&descriptor.exhibit_id).is_some() {
            return Err(CaseError::DuplicateExhibitId(descriptor.exhibit_id));
        }
        if let Some(parent) = &descriptor.parent_exhibit {
            if self.exhibit(parent).is_none() {
                return Err(CaseError::DanglingParent(parent.clone()));
            }
        }
        descriptor.validate()?;
        self.check_sub_exhibit_links(&descriptor)?;
        let seized = descriptor
            .seizure
            .as_ref()
            .map(|s| s.custody_event(&descriptor.exhibit_id));
        if let Some(event) = &seized {
            self.check_time(event.occurred_at)?;
        }

        let id = descriptor.exhibit_id.clone();
        self.step_records
            .extend((1..=STEP_COUNT).map(|n| StepRecord::pending(n, &id)));
        self.exhibits.push(descriptor);
        if let Some(event) = seized {
            self.push_entry(event);
        }
        Ok(id)
    }

    /// Replaces the descriptive parts of an exhibit (identification,
    /// capabilities, modifications, storage, ports, photographs). Identity,
    /// kind and parent cannot change. A seizure record may be added once.
    pub fn update_exhibit(&mut self, descriptor: Exhibit) -> Result<(), CaseError> {
        let current = self.require_exhibit(&descriptor.exhibit_id)?;
        if current.kind != descriptor.kind || current.parent_exhibit != descriptor.parent_exhibit {
            return Err(CaseError::InvalidDescriptor(
                "kind and parent exhibit cannot be changed".into(),
            ));
        }
        let seizure_added = match (&current.seizure, &descriptor.seizure) {
            (None, Some(s)) => Some(s.custody_event(&descriptor.exhibit_id)),
            (Some(a), Some(b)) if a == b => None,
            (None, None) => None,
            _ => {
                return Err(CaseError::InvalidDescriptor(
                    "a recorded seizure cannot be altered".into(),
                ))
            }
        };
        descriptor.validate()?;
        self.check_sub_exhibit_links(&descriptor)?;
        if let Some(event) = &seizure_added {
            self.check_time(event.occurred_at)?;
        }
        let slot = self
            .exhibits
            .iter_mut()
            .find(|e| e.exhibit_id == descriptor.exhibit_id)
            .expect("checked above");
        *slot = descriptor;
        if let Some(event) = seizure_added {
            self.push_entry(event);
        }
        Ok(())
    }

    fn check_sub_exhibit_links(&self, descriptor: &Exhibit) -> Result<(), CaseError> {
        for location in &descriptor.storage_locations {
            if let Some(sub) = &location.removed_as_sub_exhibit {
                match self.exhibit(sub) {
                    Some(e) if e.kind == ExhibitKind::MemoryCard => {}
                    _ => {
                        return Err(CaseError::InvalidDescriptor(format!(
                            "storage location names {sub}, which is not a MEMORY_CARD exhibit"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn set_offence(&mut self, offence: OffenceContext) {
        self.offence = Some(offence);
    }

    pub(crate) fn register_image(
        &mut self,
        exhibit_id: &str,
        image: StorageImage,
    ) -> Result<(), CaseError> {
        self.require_exhibit(exhibit_id)?;
        match self
            .images
            .iter_mut()
            .find(|r| r.image.image_path == image.image_path)
        {
            Some(existing) => existing.image = image,
            None => self.images.push(ImageRecord {
                exhibit_id: exhibit_id.to_owned(),
                image,
            }),
        }
        Ok(())
    }

    /// Registers (or refreshes) an image record for an exhibit.
    pub fn record_image(&mut self, exhibit_id: &str, image: StorageImage) -> Result<(), CaseError> {
        self.register_image(exhibit_id, image)
    }

    pub fn image_record(&self, path: &std::path::Path) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image.image_path == path)
    }

    pub(crate) fn push_evidence(&mut self, item: EvidenceItem) {
        self.evidence.push(item);
    }

    pub(crate) fn push_confirmation(&mut self, result: ConfirmationResult) {
        self.confirmations.retain(|c| c.item_id != result.item_id);
        self.confirmations.push(result);
    }

    pub(crate) fn push_summary(&mut self, summary: RegisteredSummary) {
        self.flight_summaries.push(summary);
    }
}
