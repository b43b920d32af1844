//! Indices of a daily field sequence, analysed or forecast, against
//! training-period climatologies.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};

use super::fdii::{fdii_field, FdiiConfig, FdiiResult};
use super::percentile::{calendar_pentads, pentad_cube, PentadPool, PentadSeries, SeriesSource, PENTAD_DAYS, POOL_HALFWIDTH_DAYS};
use super::sesr::{esr, esr_climatology, sesr};
use crate::error::{Error, Result};
use crate::pipeline::{Archive, ClimatologyTable};

pub const SM_LAYERS: [&str; 4] = ["sm1", "sm2", "sm3", "sm4"];

/// ESR climatology and soil-moisture percentile pools of the training years.
#[derive(Debug, Clone)]
pub struct IndexClimatology {
    pub years: Vec<i32>,
    pub esr: ClimatologyTable,
    pub sm: BTreeMap<String, PentadPool>,
}

impl IndexClimatology {
    pub fn build(archive: &Archive, years: &[i32], pool_halfwidth: usize) -> Result<Self> {
        let sm = SM_LAYERS
            .iter()
            .map(|&l| Ok((l.to_string(), PentadPool::build(archive, l, years, POOL_HALFWIDTH_DAYS)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            years: years.to_vec(),
            esr: esr_climatology(archive, years, pool_halfwidth)?,
            sm,
        })
    }
}

/// SESR per day plus soil-moisture percentiles and FDII per layer.
#[derive(Debug, Clone)]
pub struct SequenceIndices {
    pub first: NaiveDate,
    /// `sesr[j]` is valid on `first + j`.
    pub sesr: Vec<Vec<f64>>,
    pub sm_percentile: BTreeMap<String, PentadSeries>,
    /// Empty when the sequence spans fewer than two pentads.
    pub fdii: BTreeMap<String, Vec<FdiiResult>>,
}

fn get<'a>(day: &'a BTreeMap<String, Vec<f64>>, name: &str) -> Result<&'a [f64]> {
    day.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Data(format!("indices: field {name} missing from the sequence")))
}

/// Indices of consecutive daily fields, `days[j]` valid on `first + j`.
/// Pentads are blocks of five days from `first`; a trailing partial block
/// is dropped.
pub fn sequence_indices(
    first: NaiveDate,
    days: &[BTreeMap<String, Vec<f64>>],
    clim: &IndexClimatology,
    cfg: &FdiiConfig,
    source: SeriesSource,
) -> Result<SequenceIndices> {
    let date = |j: usize| first + Days::new(j as u64);
    let sesr_days = days
        .iter()
        .enumerate()
        .map(|(j, d)| sesr(&esr(get(d, "evap")?, get(d, "pevap")?)?, &clim.esr, date(j)))
        .collect::<Result<Vec<_>>>()?;

    let n_pent = days.len() / PENTAD_DAYS;
    let mut sm_percentile = BTreeMap::new();
    let mut fdii = BTreeMap::new();
    if n_pent > 0 {
        for (layer, pool) in &clim.sm {
            let n = pool.n_cells;
            let mut cube = Vec::with_capacity(n_pent * PENTAD_DAYS * n);
            for d in &days[..n_pent * PENTAD_DAYS] {
                let f = get(d, layer)?;
                if f.len() != n {
                    return Err(Error::Data(format!("indices: {layer} has {} cells, expected {n}", f.len())));
                }
                cube.extend_from_slice(f);
            }
            let series = PentadSeries {
                variable: layer.clone(),
                n_cells: n,
                starts: (0..n_pent).map(|p| date(p * PENTAD_DAYS)).collect(),
                values: pentad_cube(&cube, n)?,
                source,
            };
            let pct = pool.percentiles(&series)?;
            if n_pent >= 2 {
                fdii.insert(layer.clone(), fdii_field(&pct.values, n, cfg)?);
            }
            sm_percentile.insert(layer.clone(), pct);
        }
    }
    Ok(SequenceIndices {
        first,
        sesr: sesr_days,
        sm_percentile,
        fdii,
    })
}

/// Indices of a rollout whose step `j` is valid `j + 1` days after `init`.
pub fn forecast_indices(
    init: NaiveDate,
    rollout: &[BTreeMap<String, Vec<f64>>],
    clim: &IndexClimatology,
    cfg: &FdiiConfig,
) -> Result<SequenceIndices> {
    sequence_indices(init + Days::new(1), rollout, clim, cfg, SeriesSource::Forecast { init })
}

/// Archive fields for the `n` days after `init`, in rollout layout.
pub fn truth_sequence(archive: &Archive, init: NaiveDate, n: usize) -> Result<Vec<BTreeMap<String, Vec<f64>>>> {
    let names = ["evap", "pevap"].into_iter().chain(SM_LAYERS);
    let names: Vec<&str> = names.collect();
    (1..=n)
        .map(|j| {
            let d = init + Days::new(j as u64);
            names
                .iter()
                .map(|&v| Ok((v.to_string(), archive.field(v, d)?)))
                .collect()
        })
        .collect()
}

/// Indices of the archive over the same window a forecast from `init`
/// would cover.
pub fn analysis_indices(
    archive: &Archive,
    init: NaiveDate,
    n: usize,
    clim: &IndexClimatology,
    cfg: &FdiiConfig,
) -> Result<SequenceIndices> {
    let days = truth_sequence(archive, init, n)?;
    sequence_indices(init + Days::new(1), &days, clim, cfg, SeriesSource::Analysis)
}

/// Calendar-pentad percentiles and FDII of one soil layer over `year`.
pub fn annual_fdii(
    archive: &Archive,
    clim: &IndexClimatology,
    layer: &str,
    year: i32,
    cfg: &FdiiConfig,
) -> Result<(PentadSeries, Vec<FdiiResult>)> {
    let pool = clim
        .sm
        .get(layer)
        .ok_or_else(|| Error::Config(format!("indices: no percentile pool for {layer}")))?;
    let pct = pool.percentiles(&calendar_pentads(archive, layer, year)?)?;
    let res = fdii_field(&pct.values, pct.n_cells, cfg)?;
    Ok((pct, res))
}
