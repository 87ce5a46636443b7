//! Result files: the curve CSV, structured JSONL records, threshold
//! tables and trial snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use mglrt_core::detectors::DetectorId;
use mglrt_core::montecarlo::{CurveRecord, Knobs, ThresholdTable};
use mglrt_core::scenario::TrialSnapshot;
use mglrt_core::waveform::NoiseMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One CSV row. The column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub detector: DetectorId,
    pub snr_db: f64,
    pub sir_db: f64,
    pub fd: f64,
    pub alpha: f64,
    pub k_users: usize,
    pub q_active: usize,
    pub mode: NoiseMode,
    pub threshold: f64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: u64,
    pub seed: u64,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "detector", "snr_db", "sir_db", "fd", "alpha", "k_users", "q_active", "mode", "threshold", "rate", "ci_lo", "ci_hi",
    "trials", "seed",
];

impl From<&CurveRecord> for CsvRow {
    fn from(r: &CurveRecord) -> Self {
        Self {
            detector: r.detector,
            snr_db: r.snr_db,
            sir_db: r.sir_db,
            fd: r.fd,
            alpha: r.alpha,
            k_users: r.k_users,
            q_active: r.q_active,
            mode: r.mode,
            threshold: r.threshold,
            rate: r.rate,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            trials: r.trials,
            seed: r.seed,
        }
    }
}

impl CsvRow {
    pub fn knobs(&self) -> Knobs {
        Knobs {
            snr_db: self.snr_db,
            sir_db: self.sir_db,
            fd: self.fd,
            alpha: self.alpha,
            k_users: self.k_users,
            q_active: self.q_active,
            mode: self.mode,
        }
    }
}

/// A JSONL line: the full record plus what is needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    #[serde(flatten)]
    pub record: CurveRecord,
    /// Threshold family the rate was measured against.
    pub family: String,
    /// Random stream of the point; trial `i` uses `(seed, stream, i)`.
    pub stream: u64,
    /// Snapshot file of the first trial, when one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| io_err(dir, e)),
        _ => Ok(()),
    }
}

/// Appends rows, writing the header when the file is new or empty.
pub struct CsvSink {
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        ensure_parent(path)?;
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(CSV_COLUMNS).map_err(|e| io_err(path, e))?;
            writer.flush().map_err(|e| io_err(path, e))?;
        }
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &CsvRow) -> Result<(), CliError> {
        self.writer.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.writer.flush().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(io_err(path, "unexpected CSV header"));
    }
    reader.deserialize().map(|r| r.map_err(|e| io_err(path, e))).collect()
}

pub struct JsonlSink {
    file: File,
}

impl JsonlSink {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        ensure_parent(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { file })
    }

    pub fn write(&mut self, rec: &StructuredRecord) -> Result<(), CliError> {
        let line = serde_json::to_string(rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(|e| CliError::Runtime(e.to_string()))
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StructuredRecord>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .map(|l| {
            let l = l.map_err(|e| io_err(path, e))?;
            serde_json::from_str(&l).map_err(|e| io_err(path, e))
        })
        .collect()
}

pub fn read_thresholds(path: &Path) -> Result<Option<ThresholdTable>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let table: ThresholdTable = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    table.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Some(table))
}

pub fn write_thresholds(path: &Path, table: &ThresholdTable) -> Result<(), CliError> {
    write_json(path, table)
}

pub fn write_snapshot(path: &Path, snapshot: &TrialSnapshot) -> Result<(), CliError> {
    write_json(path, snapshot)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}
