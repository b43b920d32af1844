//! Flash drought intensity index on pentad soil-moisture percentiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdiiConfig {
    /// Smallest percentile drop that counts as intensification.
    pub drop_min: f64,
    /// Drought ceiling; an intensification must end strictly below it.
    pub ceiling: f64,
    /// Longest intensification window in pentads.
    pub max_window: usize,
    /// Reference rate, `baseline_points` per `baseline_pentads`.
    pub baseline_points: f64,
    pub baseline_pentads: f64,
    /// Longest drought run averaged into the severity.
    pub severity_cap: usize,
}

impl Default for FdiiConfig {
    fn default() -> Self {
        Self {
            drop_min: 15.0,
            ceiling: 20.0,
            max_window: 8,
            baseline_points: 15.0,
            baseline_pentads: 4.0,
            severity_cap: 18,
        }
    }
}

impl FdiiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_window == 0 || self.severity_cap == 0 || !(self.baseline_points > 0.0) || !(self.baseline_pentads > 0.0) {
            return Err(Error::Config("fdii: windows, cap and baseline must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.ceiling) || self.drop_min < 0.0 {
            return Err(Error::Config("fdii: ceiling must lie in [0, 100] and drop_min be non-negative".into()));
        }
        Ok(())
    }

    pub fn baseline_rate(&self) -> f64 {
        self.baseline_points / self.baseline_pentads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FdiiResult {
    pub fd_int: f64,
    pub dro_sev: f64,
    pub fdii: f64,
    /// First pentad of the strongest intensification.
    pub onset: Option<usize>,
    /// Pentad where it ends and the severity run starts.
    pub end: Option<usize>,
    /// Pentads in the severity run.
    pub extent: usize,
}

/// FDII of one percentile series. The strongest admissible intensification
/// wins; ties go to the earliest start, then the shortest window.
pub fn fdii(pct: &[f64], cfg: &FdiiConfig) -> Result<FdiiResult> {
    if pct.len() < 2 {
        return Err(Error::Data(format!("fdii: {} pentads, need at least 2", pct.len())));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for t in 0..pct.len() {
        for n in 1..=cfg.max_window {
            let Some(&end) = pct.get(t + n) else { break };
            let drop = pct[t] - end;
            if !(end < cfg.ceiling && drop >= cfg.drop_min) {
                continue;
            }
            let rate = drop / n as f64;
            if best.is_none_or(|(r, _, _)| rate > r) {
                best = Some((rate, t, t + n));
            }
        }
    }
    let Some((rate, onset, end)) = best else {
        return Ok(FdiiResult::default());
    };
    let run: Vec<f64> = pct[end..]
        .iter()
        .take_while(|&&p| p < cfg.ceiling)
        .take(cfg.severity_cap)
        .map(|p| cfg.ceiling - p)
        .collect();
    let fd_int = rate / cfg.baseline_rate();
    let dro_sev = run.iter().sum::<f64>() / run.len() as f64;
    Ok(FdiiResult {
        fd_int,
        dro_sev,
        fdii: fd_int * dro_sev,
        onset: Some(onset),
        end: Some(end),
        extent: run.len(),
    })
}

/// FDII per cell of a `[P, n_cells]` percentile cube.
pub fn fdii_field(pct: &[f64], n_cells: usize, cfg: &FdiiConfig) -> Result<Vec<FdiiResult>> {
    cfg.validate()?;
    if n_cells == 0 || pct.len() % n_cells != 0 {
        return Err(Error::Data(format!("fdii: {} values for {n_cells} cells", pct.len())));
    }
    let p = pct.len() / n_cells;
    (0..n_cells)
        .map(|c| {
            let series: Vec<f64> = (0..p).map(|k| pct[k * n_cells + c]).collect();
            fdii(&series, cfg)
        })
        .collect()
}

/// Cells with a positive FDII as `cell,onset,fd_int,dro_sev,fdii` rows.
pub fn write_event_table(path: &Path, results: &[FdiiResult]) -> Result<()> {
    let mut out = String::from("cell,onset,fd_int,dro_sev,fdii\n");
    for (c, r) in results.iter().enumerate() {
        if let (true, Some(onset)) = (r.fdii > 0.0, r.onset) {
            out.push_str(&format!("{c},{onset},{},{},{}\n", r.fd_int, r.dro_sev, r.fdii));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
