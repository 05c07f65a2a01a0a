//! Maps library errors onto the process exit-code contract:
//! 1 validation or gate, 2 integrity, 3 I/O.

use std::fmt;

use dronetrace::carving::CarvingError;
use dronetrace::casefile::{CaseError, StoreError};
use dronetrace::fixtures::FixtureError;
use dronetrace::flightlog::{EncodeError, FinalizeError, ParseError};
use dronetrace::imaging::ImagingError;
use dronetrace::report::ReportError;

pub const VALIDATION: u8 = 1;
pub const INTEGRITY: u8 = 2;
pub const IO: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn new(code: u8, msg: impl fmt::Display) -> Self {
        Self {
            code,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::new(VALIDATION, msg)
    }
}

/// Library errors that know their exit code.
pub trait Classified: std::error::Error + Send + Sync + 'static {
    fn exit_code(&self) -> u8;
}

impl<E: Classified> From<E> for Failure {
    fn from(e: E) -> Self {
        Self {
            code: e.exit_code(),
            error: e.into(),
        }
    }
}

impl Classified for CaseError {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

impl Classified for StoreError {
    fn exit_code(&self) -> u8 {
        match self {
            StoreError::DuplicateCaseId(_) | StoreError::NoCase(_) | StoreError::Locked(_) => {
                VALIDATION
            }
            StoreError::Corrupt { .. } => INTEGRITY,
            StoreError::Io { .. } => IO,
        }
    }
}

impl Classified for ImagingError {
    fn exit_code(&self) -> u8 {
        match self {
            ImagingError::DestExists(_)
            | ImagingError::NotAClone(_)
            | ImagingError::InvalidSectorSize => VALIDATION,
            ImagingError::SourceUnverified { .. } | ImagingError::BadManifest { .. } => INTEGRITY,
            ImagingError::MissingFile(_) | ImagingError::Io { .. } => IO,
        }
    }
}

impl Classified for ParseError {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

impl Classified for FinalizeError {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

impl Classified for EncodeError {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

impl Classified for CarvingError {
    fn exit_code(&self) -> u8 {
        match self {
            CarvingError::InvalidSignature { .. } => VALIDATION,
            CarvingError::MissingFile { .. } | CarvingError::WriteFailure { .. } => IO,
        }
    }
}

impl Classified for ReportError {
    fn exit_code(&self) -> u8 {
        match self {
            ReportError::UnknownItem(_)
            | ReportError::Case(_)
            | ReportError::GateBlocked { .. } => VALIDATION,
            ReportError::LedgerTampered(_) => INTEGRITY,
            ReportError::MissingArtifact { .. } | ReportError::WriteFailure { .. } => IO,
        }
    }
}

impl Classified for FixtureError {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

impl Classified for std::io::Error {
    fn exit_code(&self) -> u8 {
        IO
    }
}

impl Classified for serde_json::Error {
    fn exit_code(&self) -> u8 {
        VALIDATION
    }
}

/// Attaches a path or operation to any classified error.
pub trait Context<T> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Classified> Context<T> for Result<T, E> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: e.exit_code(),
            error: anyhow::Error::new(e).context(what.to_string()),
        })
    }
}
