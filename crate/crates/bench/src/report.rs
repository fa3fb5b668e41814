//! CSV and JSON report output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::{BenchReport, Skipped};

pub const CSV_HEADER: [&str; 10] = [
    "shape",
    "variant",
    "median_gflops",
    "q20_gflops",
    "q80_gflops",
    "macs",
    "flops",
    "predicted_speedup",
    "patch_bytes",
    "indirection_bytes",
];

pub const REPORT_FORMAT: &str = "indconv-bench-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Top-level JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    /// How `flops` and the `*_gflops` fields are counted.
    pub flop_convention: String,
    pub reports: Vec<BenchReport>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
}

impl ReportFile {
    pub fn new(reports: Vec<BenchReport>, skipped: Vec<Skipped>) -> Self {
        ReportFile {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            flop_convention: "2 FLOPs per MAC; median_gflops_mac_convention counts 1".into(),
            reports,
            skipped,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no reports to emit")]
    Empty,
    #[error("I/O error on {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report `{format}` version {version}")]
    Version { format: String, version: u32 },
}

pub fn write_csv<W: Write>(reports: &[BenchReport], w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.write_record([
            r.shape.clone(),
            r.variant.as_str().to_string(),
            r.median_gflops.to_string(),
            r.q20_gflops.to_string(),
            r.q80_gflops.to_string(),
            r.macs.to_string(),
            r.flops.to_string(),
            r.predicted_speedup.to_string(),
            r.patch_bytes.to_string(),
            r.indirection_bytes.to_string(),
        ])?;
    }
    out.flush().map_err(|err| ReportError::Io {
        path: "<csv>".into(),
        err,
    })?;
    Ok(())
}

pub fn write_json<W: Write>(file: &ReportFile, mut w: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut w, file)?;
    writeln!(w).map_err(|err| ReportError::Io {
        path: "<json>".into(),
        err,
    })?;
    Ok(())
}

pub fn write_report<W: Write>(
    reports: &[BenchReport],
    skipped: &[Skipped],
    format: ReportFormat,
    w: W,
) -> Result<(), ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => write_csv(reports, w),
        ReportFormat::Json => write_json(&ReportFile::new(reports.to_vec(), skipped.to_vec()), w),
    }
}

/// Writes the report to `path`.
pub fn emit_report(
    reports: &[BenchReport],
    skipped: &[Skipped],
    format: ReportFormat,
    path: &Path,
) -> Result<(), ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let io = |err| ReportError::Io {
        path: path.display().to_string(),
        err,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_report(reports, skipped, format, &mut w)?;
    w.flush().map_err(io)?;
    Ok(())
}

pub fn parse_json_report(text: &str) -> Result<ReportFile, ReportError> {
    let file: ReportFile = serde_json::from_str(text)?;
    if file.format != REPORT_FORMAT || file.version != REPORT_VERSION {
        return Err(ReportError::Version {
            format: file.format,
            version: file.version,
        });
    }
    Ok(file)
}

pub fn load_json_report(path: &Path) -> Result<ReportFile, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|err| ReportError::Io {
        path: path.display().to_string(),
        err,
    })?;
    parse_json_report(&text)
}
