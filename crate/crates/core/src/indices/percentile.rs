//! Pentad aggregation and empirical soil-moisture percentiles.

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::pipeline::calendar::{doy_slot, slot_distance, FEB28_SLOT, LEAP_SLOT};
use crate::pipeline::Archive;

pub const PENTAD_DAYS: usize = 5;
pub const PENTADS_PER_YEAR: usize = 73;
/// Days either side of a pentad start whose pentads enter its pool.
pub const POOL_HALFWIDTH_DAYS: usize = 15;

/// Plotting-position percentile `100 rank / (N + 1)` with
/// `rank = 1 + #(pool < value)`. NaN for a NaN value or an empty pool.
pub fn percentile_rank(value: f64, pool: &[f64]) -> f64 {
    if value.is_nan() || pool.is_empty() {
        return f64::NAN;
    }
    let below = pool.iter().filter(|&&p| p < value).count();
    100.0 * (below + 1) as f64 / (pool.len() + 1) as f64
}

/// Consecutive 5-day means of a daily series. A remainder shorter than
/// a pentad is folded into the last one (the sixth day of a leap year's
/// final pentad). NaN days are skipped.
pub fn pentad_aggregate(daily: &[f64]) -> Result<Vec<f64>> {
    let n = daily.len() / PENTAD_DAYS;
    if n == 0 {
        return Err(Error::Data(format!("pentads: {} days is shorter than a pentad", daily.len())));
    }
    Ok((0..n)
        .map(|p| {
            let end = if p + 1 == n { daily.len() } else { (p + 1) * PENTAD_DAYS };
            nan_mean(&daily[p * PENTAD_DAYS..end])
        })
        .collect())
}

fn nan_mean(v: &[f64]) -> f64 {
    let (s, k) = v
        .iter()
        .filter(|x| !x.is_nan())
        .fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

/// [`pentad_aggregate`] applied per cell of a `[T, n_cells]` cube; the
/// result is `[P, n_cells]`.
pub fn pentad_cube(cube: &[f64], n_cells: usize) -> Result<Vec<f64>> {
    if n_cells == 0 || cube.len() % n_cells != 0 {
        return Err(Error::Data(format!("pentads: {} values for {n_cells} cells", cube.len())));
    }
    let t = cube.len() / n_cells;
    let mut out = Vec::new();
    for c in 0..n_cells {
        let series: Vec<f64> = (0..t).map(|i| cube[i * n_cells + c]).collect();
        let p = pentad_aggregate(&series)?;
        if out.is_empty() {
            out = vec![0.0; p.len() * n_cells];
        }
        for (k, v) in p.into_iter().enumerate() {
            out[k * n_cells + c] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesSource {
    Analysis,
    Forecast { init: NaiveDate },
}

/// Per-cell pentad values, `[P, n_cells]`, with the first day of each pentad.
#[derive(Debug, Clone, PartialEq)]
pub struct PentadSeries {
    pub variable: String,
    pub n_cells: usize,
    pub starts: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub source: SeriesSource,
}

impl PentadSeries {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn pentad(&self, p: usize) -> &[f64] {
        &self.values[p * self.n_cells..(p + 1) * self.n_cells]
    }

    /// Time series of one cell.
    pub fn cell(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|p| self.values[p * self.n_cells + c]).collect()
    }
}

/// The 73 calendar pentads of `year` for an archive variable.
pub fn calendar_pentads(archive: &Archive, variable: &str, year: i32) -> Result<PentadSeries> {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let last = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year");
    let (i0, i1) = (archive.day_index(first)?, archive.day_index(last)?);
    let n = archive.n_cells();
    let cube: Vec<f64> = archive.cube(variable)?[i0 * n..(i1 + 1) * n]
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let values = pentad_cube(&cube, n)?;
    let starts = (0..PENTADS_PER_YEAR)
        .map(|p| first + chrono::Days::new((p * PENTAD_DAYS) as u64))
        .collect();
    Ok(PentadSeries {
        variable: variable.into(),
        n_cells: n,
        starts,
        values,
        source: SeriesSource::Analysis,
    })
}

fn regular_slot(date: NaiveDate) -> usize {
    match doy_slot(date) {
        LEAP_SLOT => FEB28_SLOT,
        s => s,
    }
}

/// Training-period 5-day means of one variable, grouped by the calendar
/// slot of their first day. A pentad starting on day `d` is ranked against
/// every training-year pentad starting within `halfwidth` days of `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PentadPool {
    pub variable: String,
    pub n_cells: usize,
    pub halfwidth: usize,
    pub years: Vec<i32>,
    /// Per regular slot, concatenated `[k, n_cells]` rows.
    by_slot: Vec<Vec<f64>>,
}

impl PentadPool {
    pub fn build(archive: &Archive, variable: &str, years: &[i32], halfwidth: usize) -> Result<Self> {
        if halfwidth > 182 {
            return Err(Error::Config("percentile pool half-width above half a year".into()));
        }
        let n = archive.n_cells();
        let cube = archive.cube(variable)?;
        let dates = archive.dates();
        let mut by_slot = vec![Vec::new(); 365];
        for (i, d) in dates.iter().enumerate() {
            if !years.contains(&d.year()) || i + PENTAD_DAYS > dates.len() || doy_slot(*d) == LEAP_SLOT {
                continue;
            }
            let row = &mut by_slot[doy_slot(*d)];
            for c in 0..n {
                let days: Vec<f64> = (i..i + PENTAD_DAYS).map(|t| f64::from(cube[t * n + c])).collect();
                row.push(nan_mean(&days));
            }
        }
        if by_slot.iter().all(Vec::is_empty) {
            return Err(Error::Data(format!("percentile pool {variable}: no training pentads")));
        }
        let mut years = years.to_vec();
        years.sort_unstable();
        years.dedup();
        Ok(Self {
            variable: variable.into(),
            n_cells: n,
            halfwidth,
            years,
            by_slot,
        })
    }

    /// Pool values for a cell and a pentad starting on `start`.
    pub fn pool(&self, start: NaiveDate, cell: usize) -> Vec<f64> {
        let s = regular_slot(start);
        let mut out = Vec::new();
        for (o, rows) in self.by_slot.iter().enumerate() {
            if slot_distance(s, o) <= self.halfwidth {
                out.extend(rows.iter().skip(cell).step_by(self.n_cells).filter(|v| !v.is_nan()));
            }
        }
        out
    }

    pub fn percentile(&self, value: f64, start: NaiveDate, cell: usize) -> f64 {
        percentile_rank(value, &self.pool(start, cell))
    }

    /// Percentiles of every value of a pentad series.
    pub fn percentiles(&self, series: &PentadSeries) -> Result<PentadSeries> {
        if series.n_cells != self.n_cells {
            return Err(Error::Data(format!(
                "percentiles: series has {} cells, pool {}",
                series.n_cells, self.n_cells
            )));
        }
        let mut values = Vec::with_capacity(series.values.len());
        for (p, &start) in series.starts.iter().enumerate() {
            for c in 0..self.n_cells {
                values.push(self.percentile(series.values[p * self.n_cells + c], start, c));
            }
        }
        Ok(PentadSeries {
            variable: format!("{}_pct", series.variable),
            values,
            ..series.clone()
        })
    }
}
