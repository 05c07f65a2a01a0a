//! The twenty examination steps, their status machine and ordering gates.
//!
//! Steps may be worked in any order with two exceptions: destructive
//! extraction (step 17) waits until every non-destructive extraction step
//! (11 to 15) has reached a terminal status, and the report (step 20) waits
//! for steps 1 to 19 and an intact custody ledger.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CaseError, CaseFile, CustodyAction, CustodyEvent};

pub const STEP_COUNT: u8 = 20;
pub const DESTRUCTIVE_STEP: u8 = 17;
pub const REPORT_STEP: u8 = 20;
const NON_DESTRUCTIVE_EXTRACTION: std::ops::RangeInclusive<u8> = 11..=15;
const EXAMINATION_LOGGED: std::ops::RangeInclusive<u8> = 11..=17;

const TITLES: [&str; STEP_COUNT as usize] = [
    "Seizure and chain of custody",
    "Conventional forensics",
    "Offence analysis",
    "Photographs",
    "Make and model",
    "Open-source research",
    "Capabilities",
    "Modifications",
    "Data storage locations",
    "Ports",
    "Extract removable storage",
    "Preserve evidence (image and clone)",
    "Standard interrogation of storage",
    "Extended interrogation of storage",
    "Interrogation of the device",
    "Interrogation of peripheral devices",
    "Destructive extraction",
    "Initial review of extracted data",
    "Interpretation and translation",
    "Report",
];

pub fn step_title(step: u8) -> &'static str {
    TITLES
        .get((step as usize).wrapping_sub(1))
        .copied()
        .unwrap_or("unknown step")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Preparation = 1,
    Examination = 2,
    AnalysisAndReport = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [
        Stage::Preparation,
        Stage::Examination,
        Stage::AnalysisAndReport,
    ];

    pub fn steps(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Stage::Preparation => 1..=6,
            Stage::Examination => 7..=17,
            Stage::AnalysisAndReport => 18..=20,
        }
    }
}

pub fn stage_of(step: u8) -> Option<Stage> {
    Stage::ALL.into_iter().find(|s| s.steps().contains(&step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepStatus {
    Pending,
    InProgress,
    Done,
    NotApplicable,
    Failed,
}

impl StepStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            StepStatus::Done | StepStatus::Failed | StepStatus::NotApplicable
        )
    }

    pub fn can_move_to(self, next: StepStatus) -> bool {
        use StepStatus::*;
        matches!(
            (self, next),
            (Pending, InProgress)
                | (InProgress, Done)
                | (InProgress, Failed)
                | (InProgress, NotApplicable)
                | (Failed, InProgress)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            StepStatus::Pending => "PENDING",
            StepStatus::InProgress => "IN_PROGRESS",
            StepStatus::Done => "DONE",
            StepStatus::NotApplicable => "NOT_APPLICABLE",
            StepStatus::Failed => "FAILED",
        }
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StepStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        [
            StepStatus::Pending,
            StepStatus::InProgress,
            StepStatus::Done,
            StepStatus::NotApplicable,
            StepStatus::Failed,
        ]
        .into_iter()
        .find(|st| st.name() == norm)
        .ok_or_else(|| format!("unknown step status `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTransition {
    pub from: StepStatus,
    pub to: StepStatus,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_number: u8,
    pub exhibit_id: String,
    pub status: StepStatus,
    #[serde(default)]
    pub justification: String,
    #[serde(default)]
    pub notes: String,
    pub updated_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub history: Vec<StepTransition>,
    /// A failed non-destructive step was retried after destructive
    /// extraction had already started.
    #[serde(default)]
    pub retried_after_destructive: bool,
}

impl StepRecord {
    pub(crate) fn pending(step_number: u8, exhibit_id: &str) -> Self {
        Self {
            step_number,
            exhibit_id: exhibit_id.to_owned(),
            status: StepStatus::Pending,
            justification: String::new(),
            notes: String::new(),
            updated_at: None,
            history: Vec::new(),
            retried_after_destructive: false,
        }
    }

    /// Whether the recorded history is a legal walk from PENDING that ends
    /// in the current status.
    pub fn history_is_legal(&self) -> bool {
        let mut status = StepStatus::Pending;
        for t in &self.history {
            if t.from != status || !status.can_move_to(t.to) {
                return false;
            }
            status = t.to;
        }
        status == self.status
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub allowed: bool,
    pub blocking_steps: Vec<u8>,
    pub reason: String,
}

impl GateDecision {
    fn open(step: u8) -> Self {
        Self {
            allowed: true,
            blocking_steps: Vec::new(),
            reason: format!("step {step} is not gated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: Stage,
    pub terminal: u32,
    pub total: u32,
}

impl StageCount {
    pub fn is_complete(&self) -> bool {
        self.terminal == self.total
    }

    pub fn pending(&self) -> u32 {
        self.total - self.terminal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhibitProgress {
    pub exhibit_id: String,
    pub stages: Vec<StageCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub exhibits: Vec<ExhibitProgress>,
}

impl CaseFile {
    pub fn step(&self, exhibit_id: &str, step: u8) -> Option<&StepRecord> {
        self.step_records
            .iter()
            .find(|r| r.exhibit_id == exhibit_id && r.step_number == step)
    }

    fn status_of(&self, exhibit_id: &str, step: u8) -> StepStatus {
        self.step(exhibit_id, step)
            .map_or(StepStatus::Pending, |r| r.status)
    }

    pub fn check_gate(&self, exhibit_id: &str, step: u8) -> Result<GateDecision, CaseError> {
        if !(1..=STEP_COUNT).contains(&step) {
            return Err(CaseError::InvalidStep(step));
        }
        self.require_exhibit(exhibit_id)?;
        let non_terminal = |steps: std::ops::RangeInclusive<u8>| -> Vec<u8> {
            steps
                .filter(|&s| !self.status_of(exhibit_id, s).is_terminal())
                .collect()
        };
        let decision = match step {
            DESTRUCTIVE_STEP => {
                let blocking = non_terminal(NON_DESTRUCTIVE_EXTRACTION);
                let reason = if blocking.is_empty() {
                    "non-destructive extraction steps 11-15 are all terminal".to_owned()
                } else {
                    format!(
                        "destructive extraction (step 17) is a last resort; steps {} must be terminal first",
                        join(&blocking)
                    )
                };
                GateDecision {
                    allowed: blocking.is_empty(),
                    blocking_steps: blocking,
                    reason,
                }
            }
            REPORT_STEP => {
                let mut blocking = non_terminal(1..=REPORT_STEP - 1);
                let mut reasons = Vec::new();
                if !blocking.is_empty() {
                    reasons.push(format!("steps {} are not terminal", join(&blocking)));
                }
                if let super::LedgerStatus::Tampered { sequence } = self.verify_ledger() {
                    // Custody integrity belongs to step 1.
                    if !blocking.contains(&1) {
                        blocking.insert(0, 1);
                    }
                    reasons.push(format!(
                        "custody ledger fails verification at entry {sequence}"
                    ));
                }
                let reason = if reasons.is_empty() {
                    "steps 1-19 are terminal and the custody ledger verifies".to_owned()
                } else {
                    format!("report issuance blocked: {}", reasons.join("; "))
                };
                GateDecision {
                    allowed: blocking.is_empty(),
                    blocking_steps: blocking,
                    reason,
                }
            }
            _ => GateDecision::open(step),
        };
        Ok(decision)
    }

    /// Moves a step to `new_status`. DONE on steps 11 to 17 appends an
    /// EXAMINED custody entry at `at`.
    pub fn record_step(
        &mut self,
        exhibit_id: &str,
        step: u8,
        new_status: StepStatus,
        notes: &str,
        justification: &str,
        at: DateTime<Utc>,
    ) -> Result<StepRecord, CaseError> {
        if !(1..=STEP_COUNT).contains(&step) {
            return Err(CaseError::InvalidStep(step));
        }
        let exhibit = self.require_exhibit(exhibit_id)?;
        if new_status == StepStatus::NotApplicable && justification.trim().is_empty() {
            return Err(CaseError::MissingJustification(step));
        }
        let current = self.status_of(exhibit_id, step);
        if !current.can_move_to(new_status) {
            return Err(CaseError::IllegalTransition {
                step,
                from: current,
                to: new_status,
            });
        }
        if step == 7 && new_status == StepStatus::Done && !exhibit.capabilities.is_complete() {
            return Err(CaseError::ChecklistIncomplete(exhibit_id.to_owned()));
        }
        let gate = self.check_gate(exhibit_id, step)?;
        if !gate.allowed {
            return Err(CaseError::GateBlocked(gate));
        }
        let logged = new_status == StepStatus::Done && EXAMINATION_LOGGED.contains(&step);
        if logged {
            self.check_time(at)?;
        }
        let retried_after_destructive = current == StepStatus::Failed
            && NON_DESTRUCTIVE_EXTRACTION.contains(&step)
            && self.status_of(exhibit_id, DESTRUCTIVE_STEP) != StepStatus::Pending;

        let examiner = self.examiner.clone();
        let record = self
            .step_records
            .iter_mut()
            .find(|r| r.exhibit_id == exhibit_id && r.step_number == step)
            .expect("every exhibit has all twenty step records");
        record.history.push(StepTransition {
            from: current,
            to: new_status,
            at,
        });
        record.status = new_status;
        record.updated_at = Some(at);
        if !notes.is_empty() {
            record.notes = notes.to_owned();
        }
        if !justification.is_empty() {
            record.justification = justification.to_owned();
        }
        record.retried_after_destructive |= retried_after_destructive;
        let snapshot = record.clone();

        if logged {
            self.push_entry(CustodyEvent {
                actor: examiner,
                action: CustodyAction::Examined,
                exhibit_id: exhibit_id.to_owned(),
                occurred_at: at,
                note: format!("step {step} ({}) done", step_title(step)),
            });
        }
        Ok(snapshot)
    }

    pub fn case_status(&self) -> StageSummary {
        let exhibits = self
            .exhibits
            .iter()
            .map(|e| ExhibitProgress {
                exhibit_id: e.exhibit_id.clone(),
                stages: Stage::ALL
                    .into_iter()
                    .map(|stage| StageCount {
                        stage,
                        terminal: stage
                            .steps()
                            .filter(|&s| self.status_of(&e.exhibit_id, s).is_terminal())
                            .count() as u32,
                        total: stage.steps().count() as u32,
                    })
                    .collect(),
            })
            .collect();
        StageSummary { exhibits }
    }

    /// Every persisted step history replays as legal transitions.
    pub fn step_histories_are_legal(&self) -> bool {
        self.step_records.iter().all(StepRecord::history_is_legal)
    }
}

fn join(steps: &[u8]) -> String {
    steps
        .iter()
        .map(u8::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}
