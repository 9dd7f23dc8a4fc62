//! Dataset file formats.
//!
//! Three CSV schemas cover real experiment exports and simulator dumps:
//!
//! - `players.csv`: `id,z,y,y_pre,x1..xk` — `y_pre` may be empty, any number
//!   of feature columns after it;
//! - `sessions.csv`: `session_id,p1..pk` — one roster slot per column;
//! - `exposures.csv`: `id,m` — fallback when session logs are unavailable.
//!
//! Exposure counts are re-derived from sessions whenever sessions are given;
//! an exposure file on top of that is cross-checked and mismatches reported
//! as warnings (the derived value wins). Outcome outliers at or above the cap
//! are removed after exposure derivation and counted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spillkit::domain::{count_exposures, ExperimentDataset, GameSession, PlayerRecord};
use spillkit::{Error, Result};

/// Where the exposure counts came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExposureSource {
    Sessions,
    ExposureFile,
}

/// What ingestion did, for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub players_read: usize,
    pub sessions_read: usize,
    pub outliers_dropped: usize,
    pub exposure_source: ExposureSource,
    /// (player id, exposure-file m, derived m) for every disagreement.
    pub exposure_mismatches: Vec<(u64, u32, u32)>,
}

/// Ingestion knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub truncation_k: u32,
    /// Rows with outcome >= cap are dropped; `None` disables removal.
    pub outlier_cap: Option<f64>,
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::data(format!("line {line}: cannot parse {what} from {field:?}"))
    })
}

fn read_players(path: &Path) -> Result<Vec<PlayerRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let expect = ["id", "z", "y", "y_pre"];
    for (i, want) in expect.iter().enumerate() {
        if names.get(i).map(String::as_str) != Some(*want) {
            return Err(Error::data(format!(
                "{}: expected column {} to be {want:?}, found {:?}",
                path.display(),
                i + 1,
                names.get(i).cloned().unwrap_or_default()
            )));
        }
    }
    let n_features = names.len() - expect.len();
    if n_features == 0 {
        return Err(Error::data(format!(
            "{}: players file needs at least one feature column after y_pre",
            path.display()
        )));
    }

    let mut players = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // one-based, after the header
        let record = record.map_err(|e| Error::data(format!("line {line}: {e}")))?;
        if record.len() != names.len() {
            return Err(Error::data(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                names.len()
            )));
        }
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad player id {:?}", &record[0])))?;
        if !seen.insert(id) {
            return Err(Error::data(format!("line {line}: duplicate player id {id}")));
        }
        let z: u8 = match record[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::data(format!(
                    "line {line}: assignment z must be 0 or 1, found {other:?}"
                )))
            }
        };
        let y = parse_f64(&record[2], line, "outcome y")?;
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::data(format!(
                "line {line}: outcome y must be a nonnegative number, found {y}"
            )));
        }
        let y_pre = match record[3].trim() {
            "" => None,
            field => Some(parse_f64(field, line, "pre-period outcome y_pre")?),
        };
        let mut x = Vec::with_capacity(n_features);
        for j in 0..n_features {
            x.push(parse_f64(&record[4 + j], line, &format!("feature {}", names[4 + j]))?);
        }
        let p = PlayerRecord {
            id,
            z,
            x,
            m: 0,
            y,
            y_pre,
        };
        p.validate()?;
        players.push(p);
    }
    if players.is_empty() {
        return Err(Error::data(format!(
            "{}: players file has no data rows",
            path.display()
        )));
    }
    Ok(players)
}

fn read_sessions(path: &Path) -> Result<Vec<GameSession>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("session_id") {
        return Err(Error::data(format!(
            "{}: first column must be session_id",
            path.display()
        )));
    }
    let slots = headers.len() - 1;
    if slots == 0 {
        return Err(Error::data(format!(
            "{}: sessions file needs roster columns",
            path.display()
        )));
    }
    let mut sessions = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::data(format!("line {line}: {e}")))?;
        let session_id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad session id {:?}", &record[0])))?;
        let mut roster = Vec::with_capacity(slots);
        for j in 1..record.len() {
            let field = record[j].trim();
            if field.is_empty() {
                continue; // ragged roster: smaller teams allowed
            }
            roster.push(field.parse::<u64>().map_err(|_| {
                Error::data(format!("line {line}: bad roster id {field:?}"))
            })?);
        }
        if roster.is_empty() {
            return Err(Error::data(format!("line {line}: empty roster")));
        }
        sessions.push(GameSession {
            session_id,
            roster,
            treated: false,
        });
    }
    Ok(sessions)
}

fn read_exposures(path: &Path) -> Result<Vec<(u64, u32)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::data(format!("line {line}: {e}")))?;
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad player id {:?}", &record[0])))?;
        let m: u32 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad exposure count {:?}", &record[1])))?;
        out.push((id, m));
    }
    Ok(out)
}

/// Load a dataset from files. `sessions` takes precedence for exposure
/// derivation; `exposures` alone is the fallback; at least one is required.
pub fn load_dataset(
    players_path: &Path,
    sessions_path: Option<&Path>,
    exposures_path: Option<&Path>,
    options: &IngestOptions,
) -> Result<(ExperimentDataset, IngestionReport)> {
    let mut players = read_players(players_path)?;
    let mut exposure_mismatches = Vec::new();
    let mut sessions = Vec::new();
    let exposure_source = match (sessions_path, exposures_path) {
        (Some(sp), maybe_ep) => {
            sessions = read_sessions(sp)?;
            let derived = count_exposures(&mut sessions, &players)?;
            for p in &mut players {
                p.m = derived[&p.id];
            }
            if let Some(ep) = maybe_ep {
                for (id, claimed) in read_exposures(ep)? {
                    if let Some(&actual) = derived.get(&id) {
                        if actual != claimed {
                            exposure_mismatches.push((id, claimed, actual));
                        }
                    }
                }
            }
            ExposureSource::Sessions
        }
        (None, Some(ep)) => {
            let table: std::collections::HashMap<u64, u32> =
                read_exposures(ep)?.into_iter().collect();
            for p in &mut players {
                p.m = *table.get(&p.id).ok_or_else(|| {
                    Error::data(format!("player {} missing from exposure file", p.id))
                })?;
            }
            ExposureSource::ExposureFile
        }
        (None, None) => {
            return Err(Error::data(
                "need a sessions file or an exposure file to derive exposure counts",
            ))
        }
    };

    let players_read = players.len();
    let sessions_read = sessions.len();
    let mut outliers_dropped = 0;
    if let Some(cap) = options.outlier_cap {
        if cap <= 0.0 {
            return Err(Error::config("outlier cap must be positive"));
        }
        let before = players.len();
        players.retain(|p| p.y < cap);
        outliers_dropped = before - players.len();
        if players.is_empty() {
            return Err(Error::data(format!(
                "outlier cap {cap} removed every player"
            )));
        }
        // Outlier removal happens after exposure derivation; sessions that
        // reference removed players leave the log but their contamination is
        // already counted.
        let kept: std::collections::HashSet<u64> = players.iter().map(|p| p.id).collect();
        sessions.retain(|s| s.roster.iter().all(|id| kept.contains(id)));
    }

    let dataset = ExperimentDataset {
        players,
        sessions,
        truncation_k: options.truncation_k,
    };
    Ok((
        dataset,
        IngestionReport {
            players_read,
            sessions_read,
            outliers_dropped,
            exposure_source,
            exposure_mismatches,
        },
    ))
}

/// Shortest round-trip decimal form of a float.
fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").expect("formatting f64 cannot fail");
    s
}

/// Write `players.csv` in the ingestion schema.
pub fn write_players_csv(dataset: &ExperimentDataset, path: &Path) -> Result<()> {
    let n_features = dataset.players.first().map_or(1, |p| p.x.len());
    let mut out = String::new();
    out.push_str("id,z,y,y_pre");
    for j in 1..=n_features {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for p in &dataset.players {
        let _ = write!(out, "{},{},{}", p.id, p.z, fmt_f64(p.y));
        match p.y_pre {
            Some(v) => {
                let _ = write!(out, ",{}", fmt_f64(v));
            }
            None => out.push(','),
        }
        for x in &p.x {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Write `sessions.csv` in the ingestion schema.
pub fn write_sessions_csv(dataset: &ExperimentDataset, path: &Path) -> Result<()> {
    let slots = dataset
        .sessions
        .iter()
        .map(|s| s.roster.len())
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str("session_id");
    for j in 1..=slots {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for s in &dataset.sessions {
        let _ = write!(out, "{}", s.session_id);
        for j in 0..slots {
            match s.roster.get(j) {
                Some(id) => {
                    let _ = write!(out, ",{id}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Write `exposures.csv` (id, derived m).
pub fn write_exposures_csv(dataset: &ExperimentDataset, path: &Path) -> Result<()> {
    let mut out = String::from("id,m\n");
    for p in &dataset.players {
        let _ = writeln!(out, "{},{}", p.id, p.m);
    }
    std::fs::write(path, out).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}
