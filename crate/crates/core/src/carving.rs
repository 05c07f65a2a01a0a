//! Header/terminator signature carving over a raw image.
//!
//! No filesystem metadata is consulted and fragmented files are not
//! reassembled. Every header hit is carved independently, so a hit nested
//! inside another carved file is emitted too.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use memchr::memmem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{hex_bytes, sha256, Sha256Digest};
use crate::imaging::StorageImage;

pub const DEFAULT_MAX_SIZE: u64 = 64 * 1024 * 1024;

const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

#[derive(Debug, Error)]
pub enum CarvingError {
    #[error("MISSING_FILE: {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("WRITE_FAILURE: {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("INVALID_SIGNATURE: line {line}: {reason}")]
    InvalidSignature { line: usize, reason: String },
}

/// How the end of a carved file is found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Terminator {
    /// Up to and including the first occurrence of these bytes.
    Footer {
        #[serde(with = "serde_hex")]
        bytes: Vec<u8>,
    },
    /// Walk length-prefixed PNG chunks to the end of IEND.
    PngChunks,
    /// Walk ISO-BMFF boxes from `ftyp` until a byte run that is not a box.
    Mp4Boxes,
}

impl Terminator {
    fn mode(&self) -> &'static str {
        match self {
            Terminator::Footer { .. } => "footer",
            Terminator::PngChunks => "png_chunks",
            Terminator::Mp4Boxes => "mp4_boxes",
        }
    }
}

mod serde_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub name: String,
    #[serde(with = "serde_hex")]
    pub header: Vec<u8>,
    pub terminator: Terminator,
    pub max_size: u64,
    pub ext: String,
    /// Distance from the start of the file to the header bytes; 4 for
    /// `ftyp`, which follows the first box's length field.
    pub header_offset: u64,
}

impl Signature {
    pub fn jpeg() -> Self {
        Self {
            name: "jpeg".into(),
            header: vec![0xFF, 0xD8, 0xFF],
            terminator: Terminator::Footer {
                bytes: vec![0xFF, 0xD9],
            },
            max_size: DEFAULT_MAX_SIZE,
            ext: "jpg".into(),
            header_offset: 0,
        }
    }

    pub fn png() -> Self {
        Self {
            name: "png".into(),
            header: PNG_MAGIC.to_vec(),
            terminator: Terminator::PngChunks,
            max_size: DEFAULT_MAX_SIZE,
            ext: "png".into(),
            header_offset: 0,
        }
    }

    pub fn mp4() -> Self {
        Self {
            name: "mp4".into(),
            header: b"ftyp".to_vec(),
            terminator: Terminator::Mp4Boxes,
            max_size: DEFAULT_MAX_SIZE,
            ext: "mp4".into(),
            header_offset: 4,
        }
    }

    pub fn builtin() -> Vec<Signature> {
        vec![Self::jpeg(), Self::png(), Self::mp4()]
    }

    fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(format!("bad signature name `{}`", self.name));
        }
        if self.header.is_empty() {
            return Err("header must not be empty".into());
        }
        if self.max_size == 0 {
            return Err("max_size must be positive".into());
        }
        if let Terminator::Footer { bytes } = &self.terminator {
            if bytes.is_empty() {
                return Err("footer mode needs a footer pattern".into());
            }
        }
        Ok(())
    }

    /// One definition-file line for this signature.
    pub fn to_definition(&self) -> String {
        let footer = match &self.terminator {
            Terminator::Footer { bytes } => hex::encode(bytes),
            _ => String::new(),
        };
        format!(
            "{},{},{},{},{}",
            self.name,
            hex::encode(&self.header),
            self.terminator.mode(),
            footer,
            self.max_size
        )
    }
}

/// Parses a signature definition file: one
/// `name,hex_header,mode,hex_footer_or_empty,max_size_bytes` per line. Blank
/// lines and lines starting with `#` are ignored. In `mp4_boxes` mode the
/// header is matched four bytes into the file.
pub fn parse_signature_file(text: &str) -> Result<Vec<Signature>, CarvingError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| CarvingError::InvalidSignature {
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [name, header, mode, footer, max] = fields[..] else {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        };
        let header = hex::decode(header).map_err(|e| bad(format!("header: {e}")))?;
        let footer = hex::decode(footer).map_err(|e| bad(format!("footer: {e}")))?;
        let max_size: u64 = max.parse().map_err(|e| bad(format!("max_size: {e}")))?;
        let (terminator, header_offset) = match mode {
            "footer" => (Terminator::Footer { bytes: footer }, 0),
            "png_chunks" => (Terminator::PngChunks, 0),
            "mp4_boxes" => (Terminator::Mp4Boxes, 4),
            other => return Err(bad(format!("unknown mode `{other}`"))),
        };
        let sig = Signature {
            name: name.to_owned(),
            header,
            terminator,
            max_size,
            ext: ext_for(name),
            header_offset,
        };
        sig.validate().map_err(bad)?;
        out.push(sig);
    }
    Ok(out)
}

fn ext_for(name: &str) -> String {
    match name.to_ascii_lowercase().as_str() {
        "jpeg" => "jpg".into(),
        other => other.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureHit {
    pub signature_name: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarvedFile {
    pub signature_name: String,
    pub offset: u64,
    pub length: u64,
    #[serde(with = "hex_bytes")]
    pub content_digest: Sha256Digest,
    pub output_path: PathBuf,
    /// False when no terminator was found and the file was cut at
    /// `max_size` or the end of the image.
    pub terminated: bool,
}

fn hits_with_index(data: &[u8], signatures: &[Signature]) -> Vec<(u64, usize)> {
    let mut hits = Vec::new();
    for (idx, sig) in signatures.iter().enumerate() {
        if sig.header.is_empty() {
            continue;
        }
        for pos in memmem::find_iter(data, &sig.header) {
            if let Some(start) = (pos as u64).checked_sub(sig.header_offset) {
                hits.push((start, idx));
            }
        }
    }
    hits.sort_unstable();
    hits
}

/// Every header occurrence of every signature, ascending by offset; ties keep
/// the order of `signatures`.
pub fn scan_bytes(data: &[u8], signatures: &[Signature]) -> Vec<SignatureHit> {
    hits_with_index(data, signatures)
        .into_iter()
        .map(|(offset, idx)| SignatureHit {
            signature_name: signatures[idx].name.clone(),
            offset,
        })
        .collect()
}

fn read_image(image: &StorageImage) -> Result<Vec<u8>, CarvingError> {
    fs::read(&image.image_path).map_err(|source| CarvingError::MissingFile {
        path: image.image_path.clone(),
        source,
    })
}

pub fn scan_signatures(
    image: &StorageImage,
    signatures: &[Signature],
) -> Result<Vec<SignatureHit>, CarvingError> {
    Ok(scan_bytes(&read_image(image)?, signatures))
}

/// Length of the file starting at `data[0]` and whether its terminator was
/// found. `data` is already capped at `max_size`.
fn extent(data: &[u8], sig: &Signature) -> (usize, bool) {
    match &sig.terminator {
        Terminator::Footer { bytes } => {
            let from = sig.header.len().min(data.len());
            match memmem::find(&data[from..], bytes) {
                Some(p) => (from + p + bytes.len(), true),
                None => (data.len(), false),
            }
        }
        Terminator::PngChunks => png_extent(data),
        Terminator::Mp4Boxes => mp4_extent(data),
    }
}

fn png_extent(data: &[u8]) -> (usize, bool) {
    let mut pos = PNG_MAGIC.len();
    loop {
        let Some(head) = data.get(pos..pos + 8) else {
            return (data.len(), false);
        };
        let len = u32::from_be_bytes(head[0..4].try_into().unwrap()) as usize;
        let kind = &head[4..8];
        if !kind.iter().all(u8::is_ascii_alphabetic) {
            return (data.len(), false);
        }
        let end = pos.saturating_add(12).saturating_add(len);
        if end > data.len() {
            return (data.len(), false);
        }
        if kind == b"IEND" {
            return (end, true);
        }
        pos = end;
    }
}

fn is_box_type(kind: &[u8]) -> bool {
    kind.iter()
        .all(|b| b.is_ascii_alphanumeric() || *b == b' ' || *b == 0xA9)
}

fn mp4_extent(data: &[u8]) -> (usize, bool) {
    let mut pos = 0usize;
    loop {
        let Some(head) = data.get(pos..pos + 8) else {
            // Fewer than eight bytes left cannot hold another box.
            return if pos == 0 {
                (data.len(), false)
            } else {
                (pos, true)
            };
        };
        let size32 = u32::from_be_bytes(head[0..4].try_into().unwrap()) as u64;
        let kind = &head[4..8];
        if !is_box_type(kind) {
            return if pos == 0 {
                (data.len(), false)
            } else {
                (pos, true)
            };
        }
        let size = match size32 {
            1 => match data.get(pos + 8..pos + 16) {
                Some(b) => u64::from_be_bytes(b.try_into().unwrap()),
                None => return (data.len(), false),
            },
            s => s,
        };
        if size < 8 {
            return if pos == 0 {
                (data.len(), false)
            } else {
                (pos, true)
            };
        }
        let end = (pos as u64).saturating_add(size);
        if end > data.len() as u64 {
            return (data.len(), false);
        }
        pos = end as usize;
    }
}

/// Carves every hit out of `data` without writing anything.
pub fn carve_bytes(
    data: &[u8],
    signatures: &[Signature],
) -> Vec<(SignatureHit, std::ops::Range<usize>, bool)> {
    hits_with_index(data, signatures)
        .into_iter()
        .map(|(offset, idx)| {
            let sig = &signatures[idx];
            let start = offset as usize;
            let cap = (data.len() - start).min(usize::try_from(sig.max_size).unwrap_or(usize::MAX));
            let (len, terminated) = extent(&data[start..start + cap], sig);
            (
                SignatureHit {
                    signature_name: sig.name.clone(),
                    offset,
                },
                start..start + len,
                terminated,
            )
        })
        .collect()
}

/// Carves every hit into `out_dir` as `<offset>_<name>.<ext>`.
pub fn carve(
    image: &StorageImage,
    signatures: &[Signature],
    out_dir: &Path,
) -> Result<Vec<CarvedFile>, CarvingError> {
    let data = read_image(image)?;
    let write_err = |path: &Path| {
        let path = path.to_owned();
        move |source| CarvingError::WriteFailure { path, source }
    };
    fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let mut out = Vec::new();
    for (hit, range, terminated) in carve_bytes(&data, signatures) {
        let sig = signatures
            .iter()
            .find(|s| s.name == hit.signature_name)
            .expect("hit names come from the signature list");
        let bytes = &data[range.clone()];
        let path = out_dir.join(format!("{}_{}.{}", hit.offset, sig.name, sig.ext));
        fs::write(&path, bytes).map_err(write_err(&path))?;
        out.push(CarvedFile {
            signature_name: hit.signature_name,
            offset: hit.offset,
            length: range.len() as u64,
            content_digest: sha256(bytes),
            output_path: path,
            terminated,
        });
    }
    Ok(out)
}
