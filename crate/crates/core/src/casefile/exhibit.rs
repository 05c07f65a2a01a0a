use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CaseError, CustodyAction, CustodyEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExhibitKind {
    Uav,
    Gcs,
    MobileDevice,
    MemoryCard,
    Other,
}

/// Answers to the seizure questions asked when an exhibit is received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeizureRecord {
    pub container_used: bool,
    pub exhibit_reference: String,
    pub seizing_officer: String,
    pub unique_seal_number: String,
    pub seized_when: DateTime<Utc>,
    pub seized_where: String,
    pub network_isolated: bool,
    pub signature_space_confirmed: bool,
}

impl SeizureRecord {
    fn validate(&self) -> Result<(), CaseError> {
        for (name, value) in [
            ("seizure.exhibit_reference", &self.exhibit_reference),
            ("seizure.seizing_officer", &self.seizing_officer),
            ("seizure.unique_seal_number", &self.unique_seal_number),
            ("seizure.seized_where", &self.seized_where),
        ] {
            if value.trim().is_empty() {
                return Err(CaseError::EmptyField(name));
            }
        }
        Ok(())
    }

    pub(crate) fn custody_event(&self, exhibit_id: &str) -> CustodyEvent {
        CustodyEvent {
            actor: self.seizing_officer.clone(),
            action: CustodyAction::Seized,
            exhibit_id: exhibit_id.to_owned(),
            occurred_at: self.seized_when,
            note: format!(
                "ref {}; seal {}; at {}; container {}; isolated {}",
                self.exhibit_reference,
                self.unique_seal_number,
                self.seized_where,
                yes_no(self.container_used),
                yes_no(self.network_isolated),
            ),
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationRecord {
    pub make: String,
    pub model: String,
    pub serial_or_qr: String,
    pub suspected_counterfeit: bool,
    pub suspected_stolen: bool,
    pub research_notes: String,
    /// Width and depth.
    pub dimensions_mm: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriState {
    Yes,
    No,
    Unknown,
}

/// `None` means the question has not been answered yet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityChecklist {
    pub video_capture: Option<TriState>,
    pub audio_capture: Option<TriState>,
    pub load_carrying: Option<TriState>,
    pub offensive: Option<TriState>,
    pub defensive: Option<TriState>,
    #[serde(default)]
    pub visible_damage: String,
    #[serde(default)]
    pub missing_parts: String,
}

impl CapabilityChecklist {
    pub fn is_complete(&self) -> bool {
        [
            self.video_capture,
            self.audio_capture,
            self.load_carrying,
            self.offensive,
            self.defensive,
        ]
        .iter()
        .all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModificationCategory {
    Battery,
    Motors,
    Propellers,
    Camera,
    LoadCarrier,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationRecord {
    pub category: ModificationCategory,
    pub description: String,
    pub standard_part: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StorageMedium {
    RemovableCard,
    FixedCard,
    Flash,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageLocation {
    pub medium: StorageMedium,
    pub accessible: bool,
    /// The MEMORY_CARD exhibit this medium was removed as.
    pub removed_as_sub_exhibit: Option<String>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PortType {
    Usb2,
    Usb3,
    UsbC,
    MicroUsb,
    LightningStyle,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRecord {
    pub port_type: PortType,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhotoCategory {
    InContainer,
    ContainerDetails,
    OutOfContainer,
    Angles,
    Markings,
    Modification,
    Damage,
    Bios,
    LoadMechanism,
    WeaponCapability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub category: PhotoCategory,
    pub file_reference: String,
    pub taken_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhibit {
    pub exhibit_id: String,
    pub kind: ExhibitKind,
    /// Set for sub-exhibits, e.g. a memory card removed from a UAV.
    #[serde(default)]
    pub parent_exhibit: Option<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seizure: Option<SeizureRecord>,
    #[serde(default)]
    pub identification: Option<IdentificationRecord>,
    #[serde(default)]
    pub capabilities: CapabilityChecklist,
    #[serde(default)]
    pub modifications: Vec<ModificationRecord>,
    #[serde(default)]
    pub storage_locations: Vec<StorageLocation>,
    #[serde(default)]
    pub ports: Vec<PortRecord>,
    #[serde(default)]
    pub photographs: Vec<PhotoRecord>,
    #[serde(default)]
    pub conventional_forensics_done: bool,
}

impl Exhibit {
    pub fn new(exhibit_id: &str, kind: ExhibitKind) -> Self {
        Self {
            exhibit_id: exhibit_id.to_owned(),
            kind,
            parent_exhibit: None,
            description: String::new(),
            seizure: None,
            identification: None,
            capabilities: CapabilityChecklist::default(),
            modifications: Vec::new(),
            storage_locations: Vec::new(),
            ports: Vec::new(),
            photographs: Vec::new(),
            conventional_forensics_done: false,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), CaseError> {
        if self.exhibit_id.trim().is_empty() {
            return Err(CaseError::EmptyField("exhibit_id"));
        }
        if let Some(seizure) = &self.seizure {
            seizure.validate()?;
        }
        if let Some(Some((w, d))) = self.identification.as_ref().map(|i| i.dimensions_mm) {
            if w == 0 || d == 0 {
                return Err(CaseError::InvalidDescriptor(format!(
                    "dimensions must be positive, got {w}x{d} mm"
                )));
            }
        }
        if self
            .modifications
            .iter()
            .any(|m| m.description.trim().is_empty())
        {
            return Err(CaseError::EmptyField("modification.description"));
        }
        if self
            .photographs
            .iter()
            .any(|p| p.file_reference.trim().is_empty())
        {
            return Err(CaseError::EmptyField("photograph.file_reference"));
        }
        Ok(())
    }
}
