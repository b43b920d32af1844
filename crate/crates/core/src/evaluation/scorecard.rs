//! Delimited-text export of a skill report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rollout::{SkillReport, SkillRow};
use crate::error::{Error, Result};

pub const SCORECARD_FILE: &str = "scorecard.csv";
pub const DISTRIBUTION_FILE: &str = "distributions.csv";
pub const INCIDENT_FILE: &str = "incidents.jsonl";
pub const META_FILE: &str = "report.json";

#[derive(Debug, Serialize, Deserialize)]
struct DistributionRecord {
    variable: String,
    mask: String,
    lead: usize,
    source: String,
    n: usize,
    min: Option<f64>,
    mean: Option<f64>,
    max: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ReportMeta<'a> {
    anomaly_reference: &'a str,
    weighting: &'a str,
    inits: usize,
    first_init: Option<String>,
    last_init: Option<String>,
    incidents: usize,
    #[serde(flatten)]
    extra: &'a BTreeMap<String, String>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Writes the scorecard, anomaly distribution summaries, the incident log
/// and a metadata file into `dir`. Returns the written paths.
pub fn scorecard_export(report: &SkillReport, dir: &Path, meta: &BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let card = dir.join(SCORECARD_FILE);
    let mut w = csv::Writer::from_path(&card).map_err(|e| csv_err(&card, e))?;
    for r in &report.rows {
        w.serialize(r).map_err(|e| csv_err(&card, e))?;
    }
    w.flush().map_err(|e| Error::io(&card, e))?;

    let dpath = dir.join(DISTRIBUTION_FILE);
    let mut w = csv::Writer::from_path(&dpath).map_err(|e| csv_err(&dpath, e))?;
    for d in &report.distributions {
        let s = d.summary();
        w.serialize(DistributionRecord {
            variable: d.variable.clone(),
            mask: d.mask.clone(),
            lead: d.lead,
            source: d.source.clone(),
            n: d.values.len(),
            min: s.map(|s| s.0),
            mean: s.map(|s| s.1),
            max: s.map(|s| s.2),
        })
        .map_err(|e| csv_err(&dpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&dpath, e))?;

    let ipath = dir.join(INCIDENT_FILE);
    let mut f = fs::File::create(&ipath).map_err(|e| Error::io(&ipath, e))?;
    for i in &report.incidents {
        let line = serde_json::to_string(i).map_err(|e| Error::format(&ipath, e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&ipath, e))?;
    }

    let mpath = dir.join(META_FILE);
    let m = ReportMeta {
        anomaly_reference: report.anomaly_reference.as_str(),
        weighting: &report.weighting,
        inits: report.inits.len(),
        first_init: report.inits.first().map(|d| d.to_string()),
        last_init: report.inits.last().map(|d| d.to_string()),
        incidents: report.incidents.len(),
        extra: meta,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::format(&mpath, e.to_string()))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(vec![card, dpath, ipath, mpath])
}

/// Parses a scorecard written by [`scorecard_export`].
pub fn read_scorecard(path: &Path) -> Result<Vec<SkillRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
