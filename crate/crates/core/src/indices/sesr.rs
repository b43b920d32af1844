//! Anomalies, the evaporative stress ratio and its standardized form.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::pipeline::{build_climatology, Archive, ClimatologyTable};

/// PET below this (mm/day) leaves ESR undefined.
pub const PET_EPS: f64 = 1e-6;
/// ESR climatological std below this leaves SESR undefined.
pub const SESR_STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyField {
    pub variable: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{what}: {a} values against {b}")));
    }
    Ok(())
}

/// Departure from the day-of-year climatological mean.
pub fn anomaly(field: &[f64], clim: &ClimatologyTable, date: NaiveDate) -> Result<AnomalyField> {
    let mean = clim.mean_on(date);
    check_len("anomaly", field.len(), mean.len())?;
    Ok(AnomalyField {
        variable: clim.variable.clone(),
        date,
        values: field.iter().zip(mean).map(|(v, m)| v - m).collect(),
    })
}

/// ET / PET, NaN where PET < [`PET_EPS`].
pub fn esr(et: &[f64], pet: &[f64]) -> Result<Vec<f64>> {
    check_len("esr", et.len(), pet.len())?;
    Ok(et
        .iter()
        .zip(pet)
        .map(|(&e, &p)| if p < PET_EPS || p.is_nan() { f64::NAN } else { e / p })
        .collect())
}

/// ESR standardized by its day-of-year mean and pooled std; NaN where the
/// std is below [`SESR_STD_EPS`] or ESR is missing.
pub fn sesr(esr: &[f64], clim: &ClimatologyTable, date: NaiveDate) -> Result<Vec<f64>> {
    let (mean, std) = (clim.mean_on(date), clim.std_on(date));
    check_len("sesr", esr.len(), mean.len())?;
    Ok(esr
        .iter()
        .zip(mean.iter().zip(std))
        .map(|(&x, (&m, &s))| if s < SESR_STD_EPS || s.is_nan() { f64::NAN } else { (x - m) / s })
        .collect())
}

/// Daily ESR over the whole archive, `[T, n_cells]`.
pub fn esr_cube(archive: &Archive) -> Result<Vec<f64>> {
    let et = archive.cube("evap")?;
    let pet = archive.cube("pevap")?;
    let et: Vec<f64> = et.iter().map(|&v| f64::from(v)).collect();
    let pet: Vec<f64> = pet.iter().map(|&v| f64::from(v)).collect();
    esr(&et, &pet)
}

/// ESR climatology over `years`; days with undefined ESR are left out.
pub fn esr_climatology(archive: &Archive, years: &[i32], pool_halfwidth: usize) -> Result<ClimatologyTable> {
    build_climatology("esr", &esr_cube(archive)?, &archive.dates(), archive.n_cells(), years, pool_halfwidth)
}
