//! On-disk persistence. A case lives in its own directory as a single
//! pretty-printed JSON document; writes go through a temporary file and a
//! rename so a crash never leaves a half-written case behind.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::CaseFile;

pub const CASE_DOCUMENT: &str = "case.dtc";
pub const CASE_LOCK: &str = "case.lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("DUPLICATE_CASE_ID: a case already exists at {0}")]
    DuplicateCaseId(PathBuf),
    #[error("NO_CASE: no case document at {0}")]
    NoCase(PathBuf),
    #[error("CASE_LOCKED: {0} is held by another process; remove it only if that process is gone")]
    Locked(PathBuf),
    #[error("CORRUPT_CASE: {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// A directory holding one sub-directory per case.
#[derive(Debug, Clone)]
pub struct CaseStore {
    root: PathBuf,
}

impl CaseStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn case_dir(&self, case_id: &str) -> PathBuf {
        self.root.join(case_id)
    }

    /// Persists a new case, refusing if its id is already taken.
    pub fn create_case(&self, case: &CaseFile) -> Result<PathBuf, StoreError> {
        let dir = self.case_dir(&case.case_id);
        create_case_at(&dir, case)?;
        Ok(dir)
    }

    pub fn load(&self, case_id: &str) -> Result<CaseFile, StoreError> {
        load_case(&self.case_dir(case_id))
    }

    pub fn save(&self, case: &CaseFile) -> Result<(), StoreError> {
        save_case(&self.case_dir(&case.case_id), case)
    }
}

/// Writes `case` into `dir`, which must not already hold a case document.
pub fn create_case_at(dir: &Path, case: &CaseFile) -> Result<(), StoreError> {
    let doc = dir.join(CASE_DOCUMENT);
    if doc.exists() {
        return Err(StoreError::DuplicateCaseId(dir.to_owned()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_case(dir, case)
}

pub fn load_case(dir: &Path) -> Result<CaseFile, StoreError> {
    let doc = dir.join(CASE_DOCUMENT);
    let text = match fs::read_to_string(&doc) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NoCase(doc)),
        Err(e) => return Err(io_err(&doc)(e)),
    };
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: doc,
        reason: e.to_string(),
    })
}

pub fn save_case(dir: &Path, case: &CaseFile) -> Result<(), StoreError> {
    let doc = dir.join(CASE_DOCUMENT);
    let tmp = dir.join(format!("{CASE_DOCUMENT}.tmp"));
    let mut json = serde_json::to_vec_pretty(case).map_err(|e| StoreError::Corrupt {
        path: doc.clone(),
        reason: e.to_string(),
    })?;
    json.push(b'\n');
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&json).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &doc).map_err(io_err(&doc))
}

/// Exclusive advisory lock on a case directory, released on drop.
#[derive(Debug)]
pub struct CaseLock {
    path: PathBuf,
}

impl CaseLock {
    pub fn acquire(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(CASE_LOCK);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for CaseLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
