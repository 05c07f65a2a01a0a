//! Bit-exact acquisition of storage media into raw image files.
//!
//! Every image has a sidecar `<image>.manifest` holding its size, SHA-256
//! (authoritative), SHA-1 (advisory), acquisition time and the list of
//! sectors that could not be read:
//!
//! ```text
//! size=4194304
//! sha256=<64 hex>
//! sha1=<40 hex>
//! acquired_at=2016-12-10T19:59:56Z
//! bad=1536,512
//! ```
//!
//! Acquired originals are read-only. Only clones may be written to, and only
//! through [`write_into_clone`].

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::{hex_bytes, Sha1Digest, Sha256Digest};

pub const DEFAULT_SECTOR_SIZE: usize = 512;
const CHUNK_SECTORS: usize = 128;
const IO_BUF: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("DEST_EXISTS: {0} already exists")]
    DestExists(PathBuf),
    #[error("MISSING_FILE: {0}")]
    MissingFile(PathBuf),
    #[error("SOURCE_UNVERIFIED: {path} failed verification ({mismatch})")]
    SourceUnverified { path: PathBuf, mismatch: String },
    #[error("NOT_A_CLONE: {0} is read-only evidence")]
    NotAClone(PathBuf),
    #[error("sector size must be positive")]
    InvalidSectorSize,
    #[error("malformed manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("IO_FAILURE on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ImagingError + '_ {
    move |source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_existing(path: &Path) -> Result<File, ImagingError> {
    File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImagingError::MissingFile(path.to_path_buf()),
        _ => ImagingError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn create_new(path: &Path) -> Result<File, ImagingError> {
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            io::ErrorKind::AlreadyExists => ImagingError::DestExists(path.to_path_buf()),
            _ => ImagingError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteRange {
    pub offset: u64,
    pub length: u64,
}

impl ByteRange {
    pub fn new(offset: u64, length: u64) -> Self {
        Self { offset, length }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestKind {
    Sha256,
    Sha1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashManifest {
    pub size_bytes: u64,
    #[serde(with = "hex_bytes")]
    pub sha256: Sha256Digest,
    #[serde(with = "hex_bytes")]
    pub sha1: Sha1Digest,
    pub bad_sectors: Vec<ByteRange>,
    pub acquired_at: DateTime<Utc>,
}

impl HashManifest {
    /// Manifest of a zero-length stream.
    pub fn empty(acquired_at: DateTime<Utc>) -> Self {
        Self {
            size_bytes: 0,
            sha256: Sha256::digest([]).into(),
            sha1: Sha1::digest([]).into(),
            bad_sectors: Vec::new(),
            acquired_at,
        }
    }

    pub fn to_sidecar(&self) -> String {
        let mut out = format!(
            "size={}\nsha256={}\nsha1={}\nacquired_at={}\n",
            self.size_bytes,
            hex::encode(self.sha256),
            hex::encode(self.sha1),
            self.acquired_at
                .to_rfc3339_opts(SecondsFormat::AutoSi, true),
        );
        for bad in &self.bad_sectors {
            out.push_str(&format!("bad={},{}\n", bad.offset, bad.length));
        }
        out
    }

    pub fn parse_sidecar(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String, String> {
            let line = lines
                .next()
                .ok_or_else(|| format!("missing `{key}` line"))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| format!("expected `{key}=`, found `{line}`"))
        };
        let size_bytes = field("size")?.parse().map_err(|e| format!("size: {e}"))?;
        let mut sha256 = [0u8; 32];
        hex::decode_to_slice(field("sha256")?, &mut sha256).map_err(|e| format!("sha256: {e}"))?;
        let mut sha1 = [0u8; 20];
        hex::decode_to_slice(field("sha1")?, &mut sha1).map_err(|e| format!("sha1: {e}"))?;
        let acquired_at = DateTime::parse_from_rfc3339(&field("acquired_at")?)
            .map_err(|e| format!("acquired_at: {e}"))?
            .with_timezone(&Utc);
        let mut bad_sectors = Vec::new();
        for line in lines {
            let (offset, length) = line
                .strip_prefix("bad=")
                .and_then(|r| r.split_once(','))
                .ok_or_else(|| format!("unexpected line `{line}`"))?;
            bad_sectors.push(ByteRange::new(
                offset.parse().map_err(|e| format!("bad offset: {e}"))?,
                length.parse().map_err(|e| format!("bad length: {e}"))?,
            ));
        }
        Ok(Self {
            size_bytes,
            sha256,
            sha1,
            bad_sectors,
            acquired_at,
        })
    }
}

/// `<image>.manifest`
pub fn manifest_path(image_path: &Path) -> PathBuf {
    let mut name = image_path.as_os_str().to_os_string();
    name.push(".manifest");
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageImage {
    pub image_path: PathBuf,
    pub size_bytes: u64,
    pub manifest: HashManifest,
    pub source_description: String,
    pub read_only: bool,
    pub is_clone: bool,
    pub parent_image: Option<PathBuf>,
}

impl StorageImage {
    /// Loads an acquired original from its sidecar manifest.
    pub fn load(image_path: &Path) -> Result<Self, ImagingError> {
        let sidecar = manifest_path(image_path);
        let text = match fs::read_to_string(&sidecar) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ImagingError::MissingFile(sidecar))
            }
            Err(e) => return Err(io_err(&sidecar)(e)),
        };
        let manifest =
            HashManifest::parse_sidecar(&text).map_err(|reason| ImagingError::BadManifest {
                path: sidecar,
                reason,
            })?;
        Ok(Self {
            image_path: image_path.to_path_buf(),
            size_bytes: manifest.size_bytes,
            manifest,
            source_description: String::new(),
            read_only: true,
            is_clone: false,
            parent_image: None,
        })
    }

    /// Marks a loaded image as a writable clone of `parent`.
    pub fn into_clone_of(mut self, parent: PathBuf) -> Self {
        self.read_only = false;
        self.is_clone = true;
        self.parent_image = Some(parent);
        self
    }

    fn write_sidecar(&self) -> Result<(), ImagingError> {
        let path = manifest_path(&self.image_path);
        let tmp = tmp_path(&path);
        fs::write(&tmp, self.manifest.to_sidecar()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".tmp");
    PathBuf::from(name)
}

struct DualHasher {
    sha256: Sha256,
    sha1: Sha1,
    len: u64,
}

impl DualHasher {
    fn new() -> Self {
        Self {
            sha256: Sha256::new(),
            sha1: Sha1::new(),
            len: 0,
        }
    }

    fn update(&mut self, bytes: &[u8]) {
        self.sha256.update(bytes);
        self.sha1.update(bytes);
        self.len += bytes.len() as u64;
    }

    fn finish(self) -> (u64, Sha256Digest, Sha1Digest) {
        (
            self.len,
            self.sha256.finalize().into(),
            self.sha1.finalize().into(),
        )
    }
}

fn hash_file(path: &Path) -> Result<(u64, Sha256Digest, Sha1Digest), ImagingError> {
    let mut file = open_existing(path)?;
    let mut hasher = DualHasher::new();
    let mut buf = vec![0u8; IO_BUF];
    loop {
        let n = match file.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(io_err(path)(e)),
        };
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finish())
}

/// Copies every readable byte of `source` into a new image at `dest_path`.
///
/// The source is read in multi-sector chunks. A chunk that fails is re-read
/// one sector at a time; each sector that still fails is written as zeros
/// and recorded in the manifest's bad-sector list. Both digests are computed
/// over the bytes as written, in the same pass.
pub fn acquire<R: Read + Seek>(
    mut source: R,
    dest_path: &Path,
    sector_size: usize,
    acquired_at: DateTime<Utc>,
    source_description: &str,
) -> Result<StorageImage, ImagingError> {
    if sector_size == 0 {
        return Err(ImagingError::InvalidSectorSize);
    }
    if manifest_path(dest_path).exists() {
        return Err(ImagingError::DestExists(manifest_path(dest_path)));
    }
    let src_name = Path::new("<source>");
    let total = source.seek(SeekFrom::End(0)).map_err(io_err(src_name))?;
    source.seek(SeekFrom::Start(0)).map_err(io_err(src_name))?;

    let mut dest = create_new(dest_path)?;
    let mut hasher = DualHasher::new();
    let mut bad_sectors = Vec::new();
    let chunk_len = sector_size * CHUNK_SECTORS;
    let mut buf = vec![0u8; chunk_len];
    let mut offset = 0u64;

    while offset < total {
        let want = (chunk_len as u64).min(total - offset) as usize;
        let chunk = &mut buf[..want];
        if source.read_exact(chunk).is_err() {
            for (i, sector) in chunk.chunks_mut(sector_size).enumerate() {
                let at = offset + (i * sector_size) as u64;
                source.seek(SeekFrom::Start(at)).map_err(io_err(src_name))?;
                if source.read_exact(sector).is_err() {
                    sector.fill(0);
                    bad_sectors.push(ByteRange::new(at, sector.len() as u64));
                }
            }
            source
                .seek(SeekFrom::Start(offset + want as u64))
                .map_err(io_err(src_name))?;
        }
        dest.write_all(chunk).map_err(io_err(dest_path))?;
        hasher.update(chunk);
        offset += want as u64;
    }
    dest.sync_all().map_err(io_err(dest_path))?;
    drop(dest);

    let (size_bytes, sha256, sha1) = hasher.finish();
    let image = StorageImage {
        image_path: dest_path.to_path_buf(),
        size_bytes,
        manifest: HashManifest {
            size_bytes,
            sha256,
            sha1,
            bad_sectors,
            acquired_at,
        },
        source_description: source_description.to_owned(),
        read_only: true,
        is_clone: false,
        parent_image: None,
    };
    image.write_sidecar()?;
    let mut perms = fs::metadata(dest_path)
        .map_err(io_err(dest_path))?
        .permissions();
    perms.set_readonly(true);
    fs::set_permissions(dest_path, perms).map_err(io_err(dest_path))?;
    Ok(image)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifyOutcome {
    Ok,
    Mismatch {
        digests: Vec<DigestKind>,
        actual_size: u64,
    },
}

impl VerifyOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, VerifyOutcome::Ok)
    }
}

/// Recomputes both digests of the image file and compares them with the
/// manifest.
pub fn verify_image(image: &StorageImage) -> Result<VerifyOutcome, ImagingError> {
    let (size, sha256, sha1) = hash_file(&image.image_path)?;
    let mut digests = Vec::new();
    if sha256 != image.manifest.sha256 {
        digests.push(DigestKind::Sha256);
    }
    if sha1 != image.manifest.sha1 {
        digests.push(DigestKind::Sha1);
    }
    if digests.is_empty() && size == image.manifest.size_bytes {
        Ok(VerifyOutcome::Ok)
    } else {
        Ok(VerifyOutcome::Mismatch {
            digests,
            actual_size: size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub clone_path: PathBuf,
    /// The clone was re-hashed after copying and matched the source.
    pub verified: bool,
    pub cloned_at: DateTime<Utc>,
}

/// Makes a writable byte-identical copy of a verified image.
pub fn clone_image(
    image: &StorageImage,
    clone_path: &Path,
    cloned_at: DateTime<Utc>,
) -> Result<(CloneRecord, StorageImage), ImagingError> {
    match verify_image(image)? {
        VerifyOutcome::Ok => {}
        VerifyOutcome::Mismatch {
            digests,
            actual_size,
        } => {
            return Err(ImagingError::SourceUnverified {
                path: image.image_path.clone(),
                mismatch: format!("digests {digests:?}, size {actual_size}"),
            })
        }
    }
    if manifest_path(clone_path).exists() {
        return Err(ImagingError::DestExists(manifest_path(clone_path)));
    }
    let mut dest = create_new(clone_path)?;
    let mut src = BufReader::with_capacity(IO_BUF, open_existing(&image.image_path)?);
    io::copy(&mut src, &mut dest).map_err(io_err(clone_path))?;
    dest.sync_all().map_err(io_err(clone_path))?;
    drop(dest);

    let (size, sha256, sha1) = hash_file(clone_path)?;
    let verified =
        size == image.size_bytes && sha256 == image.manifest.sha256 && sha1 == image.manifest.sha1;
    let clone = StorageImage {
        image_path: clone_path.to_path_buf(),
        size_bytes: size,
        manifest: HashManifest {
            size_bytes: size,
            sha256,
            sha1,
            bad_sectors: image.manifest.bad_sectors.clone(),
            acquired_at: cloned_at,
        },
        source_description: format!("clone of {}", image.image_path.display()),
        read_only: false,
        is_clone: true,
        parent_image: Some(image.image_path.clone()),
    };
    clone.write_sidecar()?;
    Ok((
        CloneRecord {
            clone_path: clone_path.to_path_buf(),
            verified,
            cloned_at,
        },
        clone,
    ))
}

/// Overwrites bytes of a clone in place and re-hashes it. The clone's
/// manifest is replaced to describe the modified content.
pub fn write_into_clone(
    image: &mut StorageImage,
    offset: u64,
    bytes: &[u8],
    modified_at: DateTime<Utc>,
) -> Result<(), ImagingError> {
    if !image.is_clone || image.read_only {
        return Err(ImagingError::NotAClone(image.image_path.clone()));
    }
    let path = image.image_path.clone();
    let mut file = OpenOptions::new()
        .write(true)
        .open(&path)
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ImagingError::MissingFile(path.clone()),
            _ => io_err(&path)(e),
        })?;
    file.seek(SeekFrom::Start(offset)).map_err(io_err(&path))?;
    file.write_all(bytes).map_err(io_err(&path))?;
    file.sync_all().map_err(io_err(&path))?;
    drop(file);
    let (size, sha256, sha1) = hash_file(&path)?;
    image.size_bytes = size;
    image.manifest.size_bytes = size;
    image.manifest.sha256 = sha256;
    image.manifest.sha1 = sha1;
    image.manifest.acquired_at = modified_at;
    image.write_sidecar()
}

/// Reads `length` bytes at `offset` from any image.
pub fn read_range(image: &StorageImage, offset: u64, length: u64) -> Result<Vec<u8>, ImagingError> {
    let path = &image.image_path;
    let mut file = open_existing(path)?;
    file.seek(SeekFrom::Start(offset)).map_err(io_err(path))?;
    let mut out = vec![0u8; length as usize];
    file.read_exact(&mut out).map_err(io_err(path))?;
    Ok(out)
}

/// Maximal byte ranges where two images differ. If the sizes differ, one
/// final range covers `min(size)..max(size)`.
pub fn diff_images(a: &StorageImage, b: &StorageImage) -> Result<Vec<ByteRange>, ImagingError> {
    diff_files(&a.image_path, &b.image_path)
}

pub fn diff_files(a_path: &Path, b_path: &Path) -> Result<Vec<ByteRange>, ImagingError> {
    let mut a = BufReader::with_capacity(IO_BUF, open_existing(a_path)?);
    let mut b = BufReader::with_capacity(IO_BUF, open_existing(b_path)?);
    let mut ranges = Vec::new();
    let mut open: Option<u64> = None;
    let mut pos = 0u64;
    let mut buf_a = vec![0u8; IO_BUF];
    let mut buf_b = vec![0u8; IO_BUF];
    let (len_a, len_b) = loop {
        let na = fill(&mut a, &mut buf_a).map_err(io_err(a_path))?;
        let nb = fill(&mut b, &mut buf_b).map_err(io_err(b_path))?;
        let n = na.min(nb);
        for (i, (x, y)) in buf_a[..n].iter().zip(&buf_b[..n]).enumerate() {
            let at = pos + i as u64;
            match (x != y, open) {
                (true, None) => open = Some(at),
                (false, Some(start)) => {
                    ranges.push(ByteRange::new(start, at - start));
                    open = None;
                }
                _ => {}
            }
        }
        pos += n as u64;
        if na != nb || na < IO_BUF {
            let rest_a = a_path.metadata().map_err(io_err(a_path))?.len();
            let rest_b = b_path.metadata().map_err(io_err(b_path))?.len();
            break (rest_a, rest_b);
        }
    };
    if let Some(start) = open {
        ranges.push(ByteRange::new(start, pos - start));
    }
    if len_a != len_b {
        let (lo, hi) = (len_a.min(len_b), len_a.max(len_b));
        ranges.push(ByteRange::new(lo, hi - lo));
    }
    Ok(ranges)
}

/// Reads until `buf` is full or EOF.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}
