//! Day-of-year climatologies. Means are exact per calendar day; standard
//! deviations pool the per-day squared deviations over a window of
//! neighbouring days.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::{doy_slot, slot_distance, DOY_SLOTS, FEB28_SLOT, LEAP_SLOT, MAR1_SLOT};
use crate::error::{Error, Result};

pub const DEFAULT_POOL_HALFWIDTH: usize = 15;

/// Mean and std per day-of-year slot and cell, `[366, n_cells]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimatologyTable {
    pub variable: String,
    pub n_cells: usize,
    pub pool_halfwidth: usize,
    pub years: Vec<i32>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ClimatologyTable {
    pub fn mean_at(&self, slot: usize) -> &[f64] {
        &self.mean[slot * self.n_cells..(slot + 1) * self.n_cells]
    }

    pub fn std_at(&self, slot: usize) -> &[f64] {
        &self.std[slot * self.n_cells..(slot + 1) * self.n_cells]
    }

    pub fn mean_on(&self, date: NaiveDate) -> &[f64] {
        self.mean_at(doy_slot(date))
    }

    pub fn std_on(&self, date: NaiveDate) -> &[f64] {
        self.std_at(doy_slot(date))
    }
}

/// Builds a climatology from a time-major `[T, n_cells]` cube whose rows
/// are the consecutive `dates`. Only dates in `years` contribute; NaN values
/// are skipped. 29 February samples are left out and its slot is the
/// average of 28 February and 1 March.
pub fn build_climatology<T: Copy + Into<f64>>(
    variable: &str,
    cube: &[T],
    dates: &[NaiveDate],
    n_cells: usize,
    years: &[i32],
    pool_halfwidth: usize,
) -> Result<ClimatologyTable> {
    if n_cells == 0 || cube.len() != dates.len() * n_cells {
        return Err(Error::Data(format!(
            "climatology {variable}: cube of {} values for {} dates x {n_cells} cells",
            cube.len(),
            dates.len()
        )));
    }
    if pool_halfwidth > 182 {
        return Err(Error::Config("climatology: pool half-width above half a year".into()));
    }
    use chrono::Datelike;
    let rows: Vec<(usize, usize)> = dates
        .iter()
        .enumerate()
        .filter(|(_, d)| years.contains(&d.year()))
        .map(|(i, d)| (i, doy_slot(*d)))
        .filter(|&(_, s)| s != LEAP_SLOT)
        .collect();
    if rows.is_empty() {
        return Err(Error::Data(format!("climatology {variable}: no samples in the given years")));
    }

    let regular = DOY_SLOTS - 1;
    let mut sum = vec![0.0; regular * n_cells];
    let mut count = vec![0usize; regular * n_cells];
    for &(i, s) in &rows {
        for c in 0..n_cells {
            let v: f64 = cube[i * n_cells + c].into();
            if !v.is_nan() {
                sum[s * n_cells + c] += v;
                count[s * n_cells + c] += 1;
            }
        }
    }
    let mut mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect();
    let mut ss = vec![0.0; regular * n_cells];
    for &(i, s) in &rows {
        for c in 0..n_cells {
            let v: f64 = cube[i * n_cells + c].into();
            if !v.is_nan() {
                let d = v - mean[s * n_cells + c];
                ss[s * n_cells + c] += d * d;
            }
        }
    }

    let mut std = vec![f64::NAN; regular * n_cells];
    for s in 0..regular {
        let pool: Vec<usize> = (0..regular)
            .filter(|&o| slot_distance(s, o) <= pool_halfwidth)
            .collect();
        for c in 0..n_cells {
            let (mut num, mut dof, mut any) = (0.0, 0usize, false);
            for &o in &pool {
                let n = count[o * n_cells + c];
                if n > 0 {
                    any = true;
                    num += ss[o * n_cells + c];
                    dof += n - 1;
                }
            }
            if any {
                std[s * n_cells + c] = if dof > 0 { (num / dof as f64).sqrt() } else { 0.0 };
            }
        }
    }

    let leap = |v: &[f64]| -> Vec<f64> {
        (0..n_cells)
            .map(|c| 0.5 * (v[FEB28_SLOT * n_cells + c] + v[MAR1_SLOT * n_cells + c]))
            .collect()
    };
    let (leap_mean, leap_std) = (leap(&mean), leap(&std));
    mean.extend(leap_mean);
    std.extend(leap_std);
    let mut years = years.to_vec();
    years.sort_unstable();
    years.dedup();
    Ok(ClimatologyTable {
        variable: variable.to_string(),
        n_cells,
        pool_halfwidth,
        years,
        mean,
        std,
    })
}

/// 366-slot day-of-year mean cycle of a variable, `[366, n_cells]`.
pub fn build_cyclic_forcing<T: Copy + Into<f64>>(
    variable: &str,
    cube: &[T],
    dates: &[NaiveDate],
    n_cells: usize,
    years: &[i32],
) -> Result<Vec<f64>> {
    Ok(build_climatology(variable, cube, dates, n_cells, years, 0)?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::calendar::{date_range, year_start};

    #[test]
    fn constant_archive() {
        let dates = date_range(year_start(2003), 3 * 365 + 1);
        let cube = vec![4.0f64; dates.len() * 2];
        let t = build_climatology("x", &cube, &dates, 2, &[2003, 2004, 2005], 15).unwrap();
        assert!(t.mean.iter().all(|&m| m == 4.0));
        assert!(t.std.iter().all(|&s| s == 0.0));
        assert_eq!(t.mean.len(), 366 * 2);
    }

    #[test]
    fn leap_slot_averages_neighbours() {
        let dates = date_range(year_start(2004), 366);
        let cube: Vec<f64> = dates.iter().map(|d| doy_slot(*d) as f64).collect();
        let t = build_climatology("x", &cube, &dates, 1, &[2004], 0).unwrap();
        assert_eq!(t.mean_at(LEAP_SLOT)[0], 58.5);
        assert_eq!(t.mean_at(100)[0], 100.0);
    }

    #[test]
    fn missing_years_are_errors() {
        let dates = date_range(year_start(2003), 10);
        assert!(build_climatology("x", &[0.0f64; 10], &dates, 1, &[1999], 15).is_err());
    }
}
