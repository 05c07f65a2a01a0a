//! Append-only custody ledger.
//!
//! Entry digests are SHA-256 over a fixed-order, length-prefixed encoding:
//!
//! ```text
//! sequence      u64 BE
//! actor_len     u32 BE | actor bytes
//! action        u8
//! exhibit_len   u32 BE | exhibit_id bytes
//! occurred_at   i64 BE unix milliseconds
//! note_len      u32 BE | note bytes
//! prev_digest   32 bytes (zeros for entry 0)
//! ```
//!
//! The stored form of an entry is that encoding followed by its 32-byte
//! digest.

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::{CaseError, CaseFile};
use crate::digest::{hex_bytes, sha256, Sha256Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum CustodyAction {
    Seized = 1,
    Transferred = 2,
    Opened = 3,
    Examined = 4,
    Resealed = 5,
    Acquired = 6,
    Cloned = 7,
    Returned = 8,
}

impl CustodyAction {
    pub const ALL: [CustodyAction; 8] = [
        CustodyAction::Seized,
        CustodyAction::Transferred,
        CustodyAction::Opened,
        CustodyAction::Examined,
        CustodyAction::Resealed,
        CustodyAction::Acquired,
        CustodyAction::Cloned,
        CustodyAction::Returned,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| *a as u8 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            CustodyAction::Seized => "SEIZED",
            CustodyAction::Transferred => "TRANSFERRED",
            CustodyAction::Opened => "OPENED",
            CustodyAction::Examined => "EXAMINED",
            CustodyAction::Resealed => "RESEALED",
            CustodyAction::Acquired => "ACQUIRED",
            CustodyAction::Cloned => "CLONED",
            CustodyAction::Returned => "RETURNED",
        }
    }
}

impl std::str::FromStr for CustodyAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown custody action `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyEvent {
    pub actor: String,
    pub action: CustodyAction,
    pub exhibit_id: String,
    pub occurred_at: DateTime<Utc>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sequence: u64,
    pub event: CustodyEvent,
    #[serde(with = "hex_bytes")]
    pub prev_digest: Sha256Digest,
    #[serde(with = "hex_bytes")]
    pub entry_digest: Sha256Digest,
}

impl LedgerEntry {
    /// Canonical encoding followed by the stored digest.
    pub fn to_record(&self) -> Vec<u8> {
        let mut out = canonical_bytes(self.sequence, &self.event, &self.prev_digest);
        out.extend_from_slice(&self.entry_digest);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LedgerStatus {
    Ok,
    Tampered { sequence: u64 },
}

impl LedgerStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, LedgerStatus::Ok)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn canonical_bytes(sequence: u64, event: &CustodyEvent, prev_digest: &Sha256Digest) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(64 + event.actor.len() + event.exhibit_id.len() + event.note.len());
    out.extend_from_slice(&sequence.to_be_bytes());
    put_str(&mut out, &event.actor);
    out.push(event.action as u8);
    put_str(&mut out, &event.exhibit_id);
    out.extend_from_slice(&event.occurred_at.timestamp_millis().to_be_bytes());
    put_str(&mut out, &event.note);
    out.extend_from_slice(prev_digest);
    out
}

pub fn entry_digest(
    sequence: u64,
    event: &CustodyEvent,
    prev_digest: &Sha256Digest,
) -> Sha256Digest {
    sha256(&canonical_bytes(sequence, event, prev_digest))
}

/// Recomputes every digest and chain link. Reports the first bad entry.
pub fn verify_entries(entries: &[LedgerEntry]) -> LedgerStatus {
    let mut prev = [0u8; 32];
    for (i, entry) in entries.iter().enumerate() {
        let ok = entry.sequence == i as u64
            && entry.prev_digest == prev
            && entry_digest(entry.sequence, &entry.event, &entry.prev_digest) == entry.entry_digest;
        if !ok {
            return LedgerStatus::Tampered { sequence: i as u64 };
        }
        prev = entry.entry_digest;
    }
    LedgerStatus::Ok
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }
    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.bytes(N)?.try_into().ok()
    }
    fn string(&mut self) -> Option<String> {
        let len = u32::from_be_bytes(self.array()?) as usize;
        String::from_utf8(self.bytes(len)?.to_vec()).ok()
    }
}

/// Decodes a stored entry. `None` when the bytes are not a well-formed record.
pub fn decode_record(record: &[u8]) -> Option<LedgerEntry> {
    let mut r = Reader {
        buf: record,
        pos: 0,
    };
    let sequence = u64::from_be_bytes(r.array()?);
    let actor = r.string()?;
    let action = CustodyAction::from_code(r.array::<1>()?[0])?;
    let exhibit_id = r.string()?;
    let millis = i64::from_be_bytes(r.array()?);
    let occurred_at = Utc.timestamp_millis_opt(millis).single()?;
    let note = r.string()?;
    let prev_digest = r.array()?;
    let entry_digest = r.array()?;
    if r.pos != record.len() {
        return None;
    }
    Some(LedgerEntry {
        sequence,
        event: CustodyEvent {
            actor,
            action,
            exhibit_id,
            occurred_at,
            note,
        },
        prev_digest,
        entry_digest,
    })
}

/// Verifies a ledger in its stored byte form. A record that no longer
/// decodes counts as tampered at its own index.
pub fn verify_records<R: AsRef<[u8]>>(records: &[R]) -> LedgerStatus {
    let mut entries = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        match decode_record(record.as_ref()) {
            Some(entry) => entries.push(entry),
            None => {
                // Entries before i may still be inconsistent among themselves.
                return match verify_entries(&entries) {
                    LedgerStatus::Ok => LedgerStatus::Tampered { sequence: i as u64 },
                    bad => bad,
                };
            }
        }
    }
    verify_entries(&entries)
}

fn truncate_to_millis(at: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(at.timestamp_millis())
        .single()
        .unwrap_or(at)
}

impl CaseFile {
    pub(crate) fn check_time(&self, at: DateTime<Utc>) -> Result<(), CaseError> {
        let at = truncate_to_millis(at);
        match self.ledger.last() {
            Some(last) if at < last.event.occurred_at => Err(CaseError::TimeRegression {
                last: last.event.occurred_at,
                attempted: at,
            }),
            _ => Ok(()),
        }
    }

    /// Caller has already run [`CaseFile::check_time`].
    pub(crate) fn push_entry(&mut self, mut event: CustodyEvent) -> LedgerEntry {
        event.occurred_at = truncate_to_millis(event.occurred_at);
        let sequence = self.ledger.len() as u64;
        let prev_digest = self.ledger.last().map_or([0u8; 32], |e| e.entry_digest);
        let entry = LedgerEntry {
            sequence,
            entry_digest: entry_digest(sequence, &event, &prev_digest),
            event,
            prev_digest,
        };
        self.ledger.push(entry.clone());
        entry
    }

    /// Appends a custody event. Timestamps are stored at millisecond
    /// precision, the precision the digest covers.
    pub fn append_custody(&mut self, event: CustodyEvent) -> Result<LedgerEntry, CaseError> {
        self.require_exhibit(&event.exhibit_id)?;
        if event.actor.trim().is_empty() {
            return Err(CaseError::EmptyField("actor"));
        }
        self.check_time(event.occurred_at)?;
        Ok(self.push_entry(event))
    }

    pub fn verify_ledger(&self) -> LedgerStatus {
        verify_entries(&self.ledger)
    }

    /// The ledger in stored byte form, one record per entry.
    pub fn ledger_records(&self) -> Vec<Vec<u8>> {
        self.ledger.iter().map(LedgerEntry::to_record).collect()
    }
}
