mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use failure::Failure;

/// Forensic case workflow for seized UAVs and their storage media.
#[derive(Debug, Parser)]
#[command(name = "dronetrace", version)]
pub struct Cli {
    /// Case directory. Falls back to DRONETRACE_CASE.
    #[arg(long, global = true, env = "DRONETRACE_CASE", value_name = "DIR")]
    pub case: Option<PathBuf>,
    /// Use this RFC 3339 timestamp instead of the system clock.
    #[arg(long, global = true, value_name = "RFC3339", value_parser = parse_ts)]
    pub now: Option<DateTime<Utc>>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

pub fn parse_ts(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("not an RFC 3339 timestamp: {e}"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create or inspect a case.
    #[command(subcommand)]
    Case(CaseCmd),
    /// Register and inspect exhibits.
    #[command(subcommand)]
    Exhibit(ExhibitCmd),
    /// Chain-of-custody ledger.
    #[command(subcommand)]
    Custody(CustodyCmd),
    /// Examination steps and their gates.
    #[command(subcommand)]
    Step(StepCmd),
    /// Forensic images: acquire, verify, clone, diff.
    #[command(subcommand)]
    Image(ImageCmd),
    /// DATv1 flight logs.
    #[command(subcommand)]
    Log(LogCmd),
    /// Signature carving.
    #[command(subcommand)]
    Carve(CarveCmd),
    /// CSV and KML exports.
    #[command(subcommand)]
    Export(ExportCmd),
    /// Evidence registry: add, sift, confirm.
    #[command(subcommand)]
    Evidence(EvidenceCmd),
    /// Final report.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Synthetic test inputs.
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Debug, Subcommand)]
pub enum CaseCmd {
    New {
        #[arg(long)]
        id: String,
        #[arg(long)]
        examiner: String,
    },
    Status,
    /// Record the offence context (step 3).
    Offence {
        #[arg(long)]
        offence: String,
        #[arg(long, default_value = "")]
        role: String,
        #[arg(long, default_value = "")]
        targets: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExhibitCmd {
    /// Add an exhibit from flags or a JSON descriptor.
    Add {
        #[arg(long, required_unless_present = "descriptor")]
        id: Option<String>,
        /// UAV, GCS, MOBILE_DEVICE, MEMORY_CARD or OTHER.
        #[arg(long, required_unless_present = "descriptor")]
        kind: Option<String>,
        #[arg(long)]
        parent: Option<String>,
        #[arg(long)]
        description: Option<String>,
        #[arg(long, value_name = "JSON_FILE", conflicts_with_all = ["id", "kind", "parent", "description"])]
        descriptor: Option<PathBuf>,
    },
    /// Replace an exhibit's descriptive record from a JSON descriptor.
    Update {
        #[arg(long, value_name = "JSON_FILE")]
        descriptor: PathBuf,
    },
    Show {
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CustodyCmd {
    Log {
        #[arg(long)]
        exhibit: String,
        #[arg(long)]
        actor: String,
        /// SEIZED, TRANSFERRED, OPENED, EXAMINED, RESEALED, ACQUIRED, CLONED or RETURNED.
        #[arg(long)]
        action: String,
        #[arg(long, default_value = "")]
        note: String,
        /// When the event happened; defaults to now.
        #[arg(long, value_parser = parse_ts)]
        at: Option<DateTime<Utc>>,
    },
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum StepCmd {
    Set {
        #[arg(long)]
        exhibit: String,
        #[arg(long)]
        step: u8,
        /// pending, in-progress, done, not-applicable or failed.
        #[arg(long)]
        status: String,
        #[arg(long, default_value = "")]
        notes: String,
        #[arg(long, default_value = "")]
        justification: String,
    },
    /// Exit 1 if the step is currently blocked.
    Gate {
        #[arg(long)]
        exhibit: String,
        #[arg(long)]
        step: u8,
    },
    Show {
        #[arg(long)]
        exhibit: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ImageCmd {
    Acquire {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        dest: PathBuf,
        #[arg(long, default_value_t = dronetrace::imaging::DEFAULT_SECTOR_SIZE)]
        sector_size: usize,
        /// Register the image against this exhibit and log ACQUIRED.
        #[arg(long)]
        exhibit: Option<String>,
        #[arg(long, default_value = "")]
        description: String,
    },
    Verify {
        image: PathBuf,
    },
    Clone {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the exhibit the parent image is registered under.
        #[arg(long)]
        exhibit: Option<String>,
    },
    Diff {
        a: PathBuf,
        b: PathBuf,
    },
    /// List the allocation table of a packed card image.
    Files {
        image: PathBuf,
    },
    /// Copy one file (by table name or byte range) out of an image.
    Extract {
        image: PathBuf,
        #[command(flatten)]
        span: Span,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct Span {
    /// Name in the card allocation table.
    #[arg(long, conflicts_with_all = ["offset", "length"])]
    pub name: Option<String>,
    #[arg(long, requires = "length")]
    pub offset: Option<u64>,
    #[arg(long, requires = "offset")]
    pub length: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum LogCmd {
    /// Strict parse; fails on any defect including a missing footer.
    Parse {
        file: PathBuf,
        /// Include every decoded frame in JSON output.
        #[arg(long)]
        frames: bool,
    },
    /// Salvage every intact frame.
    Recover {
        file: PathBuf,
        #[arg(long)]
        frames: bool,
    },
    /// Close an unclosed log held inside a registered clone.
    Finalize {
        #[arg(long)]
        clone: PathBuf,
        #[command(flatten)]
        span: Span,
        #[arg(long)]
        out: PathBuf,
        /// Also write the finalized log back into the clone in place.
        #[arg(long)]
        write_back: bool,
    },
    Summary {
        file: PathBuf,
        /// Also write the summary as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CarveCmd {
    Scan {
        image: PathBuf,
        /// Signature definition file; defaults to JPEG, PNG and MP4.
        #[arg(long)]
        signatures: Option<PathBuf>,
    },
    Run {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        signatures: Option<PathBuf>,
        /// Register each carved file as CARVED_MEDIA evidence.
        #[arg(long)]
        exhibit: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Read the log with the recovery parser.
    #[arg(long)]
    pub recover: bool,
    /// Register the output as EXPORT evidence.
    #[arg(long)]
    pub exhibit: Option<String>,
    #[arg(long, requires = "exhibit")]
    pub derived_from: Option<String>,
    #[arg(long, requires = "exhibit")]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCmd {
    Csv(ExportArgs),
    Kml(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvidenceCmd {
    Add {
        /// FLIGHT_LOG, CARVED_MEDIA, SUMMARY or EXPORT.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        exhibit: String,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        operation: String,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long)]
        derived_from: Option<String>,
    },
    Sift {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        exhibit: Option<String>,
        /// Substring of the producing operation.
        #[arg(long)]
        operation: Option<String>,
    },
    Confirm {
        #[arg(long, required_unless_present = "all")]
        item: Option<String>,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    Render {
        #[arg(long, required_unless_present = "conclusions_file")]
        conclusions: Option<String>,
        #[arg(long, conflicts_with = "conclusions")]
        conclusions_file: Option<PathBuf>,
        /// Defaults to report.txt in the case directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixtureCmd {
    Flight {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        duration: u32,
        #[arg(long, default_value_t = 1)]
        rate: u32,
        #[arg(long)]
        out: PathBuf,
        /// Leave the footer off.
        #[arg(long)]
        unclosed: bool,
    },
    /// Pack logs and media into a card image; writes `<out>.layout` too.
    Card {
        #[arg(long)]
        out: PathBuf,
        /// Ten logs FLY095-FLY104 (last unclosed) and three JPEGs on 64 MiB.
        #[arg(long, conflicts_with_all = ["log", "media", "size", "unclosed_last"])]
        case_study: bool,
        #[arg(long, default_value_t = 2016)]
        seed: u64,
        #[arg(long)]
        log: Vec<PathBuf>,
        #[arg(long)]
        media: Vec<PathBuf>,
        #[arg(long, default_value_t = 64 * 1024 * 1024)]
        size: u64,
        #[arg(long)]
        unclosed_last: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
