//! Machine-readable verification records, CSV tables, and the binary
//! coefficient dump.
//!
//! Verification output is JSON lines, one record per check, each carrying
//! the estimate, its 95% half-width, the target where one exists, and the
//! pass flag. The coefficient dump is `KSSP` + version byte + little-endian
//! header `(K: u32, dt: f64, T: f64, seed: u64)` followed by row-major
//! `f64` coefficients.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{KsError, Result};
use crate::spectral::SpectralField;

/// One verification record.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub estimate: f64,
    pub half_width: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl CheckRecord {
    /// Pass iff `|estimate - target| <= tolerance + half_width`.
    pub fn against_target(
        name: impl Into<String>,
        target: f64,
        tolerance: f64,
        estimate: f64,
        half_width: f64,
    ) -> Self {
        Self {
            name: name.into(),
            target: Some(target),
            tolerance: Some(tolerance),
            estimate,
            half_width,
            pass: (estimate - target).abs() <= tolerance + half_width,
            detail: None,
        }
    }

    /// A check whose pass/fail was decided by the caller.
    pub fn decided(name: impl Into<String>, estimate: f64, half_width: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            target: None,
            tolerance: None,
            estimate,
            half_width,
            pass,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

/// Accumulates records for one campaign.
#[derive(Debug, Default)]
pub struct ReportSink {
    records: Vec<CheckRecord>,
}

impl ReportSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[CheckRecord] {
        &self.records
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for record in &self.records {
            let line = serde_json::to_string(record)
                .map_err(|e| KsError::Config(format!("serialize record: {e}")))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// One human-readable line per check.
    pub fn summary_lines(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| {
                let status = if r.pass { "PASS" } else { "FAIL" };
                match (r.target, r.tolerance) {
                    (Some(t), Some(tol)) => format!(
                        "{status} {name}: estimate {est:.6e} (±{hw:.1e}) target {t:.6e} ± {tol:.1e}",
                        name = r.name,
                        est = r.estimate,
                        hw = r.half_width,
                    ),
                    _ => format!(
                        "{status} {name}: estimate {est:.6e} (±{hw:.1e})",
                        name = r.name,
                        est = r.estimate,
                        hw = r.half_width,
                    ),
                }
            })
            .collect()
    }
}

/// Writes a numeric CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

const DUMP_MAGIC: &[u8; 4] = b"KSSP";
const DUMP_VERSION: u8 = 1;

/// Writes the binary coefficient dump for a state sequence.
pub fn write_coefficient_dump(
    path: &Path,
    dt: f64,
    t_end: f64,
    seed: u64,
    states: &[SpectralField],
) -> Result<()> {
    let k = states.first().map_or(0, SpectralField::len);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&[DUMP_VERSION])?;
    out.write_all(&(k as u32).to_le_bytes())?;
    out.write_all(&dt.to_le_bytes())?;
    out.write_all(&t_end.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    for state in states {
        debug_assert_eq!(state.len(), k);
        for &a in state.coeffs() {
            out.write_all(&a.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parsed coefficient dump.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDump {
    pub k: u32,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
}

pub fn read_coefficient_dump(path: &Path) -> Result<CoefficientDump> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 33 || &bytes[..4] != DUMP_MAGIC {
        return Err(KsError::Config("not a coefficient dump (bad magic)".into()));
    }
    if bytes[4] != DUMP_VERSION {
        return Err(KsError::Config(format!("unsupported dump version {}", bytes[4])));
    }
    let k = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let dt = f64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let t_end = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
    let seed = u64::from_le_bytes(bytes[25..33].try_into().unwrap());
    let body = &bytes[33..];
    let row = 8 * k as usize;
    if row == 0 || body.len() % row != 0 {
        return Err(KsError::Config("dump body length inconsistent with K".into()));
    }
    let states = body
        .chunks_exact(row)
        .map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok(CoefficientDump { k, dt, t_end, seed, states })
}
