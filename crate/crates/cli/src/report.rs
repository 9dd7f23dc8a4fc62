//! Versioned JSON reports and tidy CSV tables.
//!
//! Every report embeds the tool version, the master seed, and the full
//! effective configuration, so a run can be reproduced from its own output.
//! Serialization is fully deterministic: struct-ordered JSON fields, vectors
//! instead of maps, shortest-round-trip floats, no timestamps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spillkit::domain::GroupSizes;
use spillkit::estimators::TauEstimate;
use spillkit::evaluation::{McConfig, McSummary};
use spillkit::{Error, Result};

use crate::ingest::IngestionReport;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo {
            name: "spillkit".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Output formats for `emit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Some(OutputFormat::Json),
            "csv" => Some(OutputFormat::Csv),
            "both" => Some(OutputFormat::Both),
            _ => None,
        }
    }

    pub fn wants_json(&self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn wants_csv(&self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

/// Report for a single-dataset estimate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub kind: String,
    pub tool: ToolInfo,
    pub seed: u64,
    /// Effective configuration echo (command settings after merging).
    pub config: serde_json::Value,
    pub truncation_k: u32,
    pub group_sizes: GroupSizes,
    pub ingestion: Option<IngestionReport>,
    pub estimators: Vec<TauEstimate>,
}

/// Report for a Monte Carlo evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub kind: String,
    pub tool: ToolInfo,
    pub config: McConfig,
    pub summary: McSummary,
}

fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").expect("formatting f64 cannot fail");
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Per-level table of an estimate run: one row per estimator x level.
pub fn render_estimate_levels_csv(report: &EstimateReport) -> String {
    let mut out =
        String::from("estimator,level,label,estimate,n_units,effective_sample_size,treated_support\n");
    for tau in &report.estimators {
        for level in &tau.levels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                tau.kind.name(),
                level.category.0,
                level.category.label(report.truncation_k),
                fmt_opt(level.estimate),
                level.n_units,
                fmt_f64(level.effective_sample_size),
                fmt_f64(level.treated_support),
            );
        }
    }
    out
}

/// Overall-effect table: one row per estimator.
pub fn render_estimate_overall_csv(report: &EstimateReport) -> String {
    let mut out = String::from("estimator,overall_tau,dropped_weight,error\n");
    for tau in &report.estimators {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            tau.kind.name(),
            fmt_opt(tau.overall),
            fmt_f64(tau.dropped_weight),
            tau.error.clone().unwrap_or_default(),
        );
    }
    out
}

/// Tidy per-level Monte Carlo table, one row per estimator x level, shaped
/// for direct plotting of effect-versus-exposure panels.
pub fn render_mc_levels_csv(report: &McReport) -> String {
    let k = report.config.sim.truncation_k;
    let mut out = String::from(
        "estimator,level,label,defined_fraction,mean_treated_support,mean,lower_2_5,upper_97_5,truth,bias,rmse\n",
    );
    for cell in &report.summary.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            cell.estimator.name(),
            cell.category.0,
            cell.category.label(k),
            fmt_f64(cell.defined_fraction),
            fmt_f64(cell.mean_treated_support),
            fmt_opt(cell.mean),
            fmt_opt(cell.lower_2_5),
            fmt_opt(cell.upper_97_5),
            fmt_f64(cell.truth),
            fmt_opt(cell.bias),
            fmt_opt(cell.rmse),
        );
    }
    out
}

/// Overall-effect Monte Carlo table.
pub fn render_mc_overall_csv(report: &McReport) -> String {
    let mut out = String::from("estimator,defined_fraction,mean,lower_2_5,upper_97_5\n");
    for cell in &report.summary.overall {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            cell.estimator.name(),
            fmt_f64(cell.defined_fraction),
            fmt_opt(cell.mean),
            fmt_opt(cell.lower_2_5),
            fmt_opt(cell.upper_97_5),
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    std::fs::write(path, contents)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Write the estimate report in the selected formats; returns written paths.
pub fn emit_estimate(
    report: &EstimateReport,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    if format.wants_json() {
        written.push(write_file(&out_dir.join("estimate.json"), &to_json(report)?)?);
    }
    if format.wants_csv() {
        written.push(write_file(
            &out_dir.join("estimate_levels.csv"),
            &render_estimate_levels_csv(report),
        )?);
        written.push(write_file(
            &out_dir.join("estimate_overall.csv"),
            &render_estimate_overall_csv(report),
        )?);
    }
    Ok(written)
}

/// Write the Monte Carlo report in the selected formats.
pub fn emit_mc(report: &McReport, out_dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    if format.wants_json() {
        written.push(write_file(&out_dir.join("mc_summary.json"), &to_json(report)?)?);
    }
    if format.wants_csv() {
        written.push(write_file(
            &out_dir.join("mc_levels.csv"),
            &render_mc_levels_csv(report),
        )?);
        written.push(write_file(
            &out_dir.join("mc_overall.csv"),
            &render_mc_overall_csv(report),
        )?);
    }
    Ok(written)
}

/// A stored report of either kind, detected by its `kind` field.
pub enum StoredReport {
    Estimate(Box<EstimateReport>),
    Mc(Box<McReport>),
}

/// Load a previously written JSON report for re-rendering.
pub fn load_report(path: &Path) -> Result<StoredReport> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let probe: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| Error::data(format!("{}: not valid JSON: {e}", path.display())))?;
    match probe.get("kind").and_then(|k| k.as_str()) {
        Some("estimate") => {
            let report: EstimateReport = serde_json::from_str(&raw)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            Ok(StoredReport::Estimate(Box::new(report)))
        }
        Some("mc-summary") => {
            let report: McReport = serde_json::from_str(&raw)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            Ok(StoredReport::Mc(Box::new(report)))
        }
        other => Err(Error::data(format!(
            "{}: unknown report kind {other:?}",
            path.display()
        ))),
    }
}
