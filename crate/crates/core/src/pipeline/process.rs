//! Raw archive to model-ready archive.

use serde::{Deserialize, Serialize};

use super::archive::{Archive, Stage};
use super::catalog::{Role, VariableCatalog};
use super::climatology::{build_climatology, build_cyclic_forcing, DEFAULT_POOL_HALFWIDTH};
use super::normalize::NormStats;
use super::preprocess::{coarse_grid, coarsen_field, coarsen_mode, gap_fill_cube, running_accumulation_30, AccumulationMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Block size of the spatial coarsening; 1 keeps the grid.
    pub coarsen_factor: usize,
    pub pool_halfwidth: usize,
    pub accumulation: AccumulationMode,
    /// Years feeding climatologies, cycles and normalization statistics.
    pub train_years: Vec<i32>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            coarsen_factor: 1,
            pool_halfwidth: DEFAULT_POOL_HALFWIDTH,
            accumulation: AccumulationMode::Total,
            train_years: Vec::new(),
        }
    }
}

/// Name of the daily variable a cyclic forcing is averaged from.
pub fn cyclic_source(name: &str) -> &str {
    name.strip_suffix("_clim").unwrap_or(name)
}

const ACCUM_TARGET: &str = "precip_30d";
const ACCUM_SOURCE: &str = "precip_1d";

fn to_f32(v: impl IntoIterator<Item = f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

fn coarsen(raw: &Archive, catalog: &VariableCatalog, factor: usize) -> Result<Archive> {
    let grid = coarse_grid(&raw.grid, factor)?;
    let (nl, nw) = (raw.grid.n_lat(), raw.grid.n_lon());
    let weights = raw.grid.row_weights();
    let mut out = Archive::new(grid, raw.start, raw.n_days);
    out.provenance = raw.provenance.clone();
    out.scalars = raw.scalars.clone();
    let nc = raw.n_cells();
    for (name, cube) in &raw.daily {
        let mut coarse = Vec::with_capacity(out.n_days * out.n_cells());
        for day in cube.chunks(nc) {
            let f: Vec<f64> = day.iter().map(|&v| f64::from(v)).collect();
            coarse.extend(to_f32(coarsen_field(&f, nl, nw, &weights, factor)?));
        }
        out.insert_daily(name, coarse)?;
    }
    for (name, field) in &raw.statics {
        let f: Vec<f64> = field.iter().map(|&v| f64::from(v)).collect();
        let categorical = catalog.get(name).map(|v| v.categorical).unwrap_or(false);
        // the land-sea mask is coarsened to a land fraction
        let c = if categorical && name != "lsm" {
            coarsen_mode(&f, nl, nw, factor)?
        } else {
            coarsen_field(&f, nl, nw, &weights, factor)?
        };
        out.insert_static(name, to_f32(c))?;
    }
    Ok(out)
}

/// Coarsening, gap filling, the 30-day accumulation, cyclic forcings,
/// output climatologies and normalization statistics.
pub fn preprocess(raw: &Archive, catalog: &VariableCatalog, cfg: &PreprocessConfig) -> Result<Archive> {
    let years = raw.years();
    if cfg.train_years.is_empty() || cfg.train_years.iter().any(|y| !years.contains(y)) {
        return Err(Error::Config(format!(
            "preprocess: training years {:?} must be a non-empty subset of {:?}",
            cfg.train_years, years
        )));
    }
    let mut a = if cfg.coarsen_factor > 1 {
        coarsen(raw, catalog, cfg.coarsen_factor)?
    } else {
        raw.clone()
    };
    let n = a.n_cells();
    for cube in a.daily.values_mut() {
        if cube.iter().any(|v| v.is_nan()) {
            let mut f: Vec<f64> = cube.iter().map(|&v| f64::from(v)).collect();
            gap_fill_cube(&mut f, n);
            *cube = to_f32(f);
        }
    }

    if catalog.get(ACCUM_TARGET).is_ok() && !a.daily.contains_key(ACCUM_TARGET) {
        let src = a.cube(ACCUM_SOURCE)?;
        let mut acc = vec![0f32; src.len()];
        for c in 0..n {
            let series: Vec<f64> = (0..a.n_days).map(|t| f64::from(src[t * n + c])).collect();
            for (t, v) in running_accumulation_30(&series, cfg.accumulation)?.into_iter().enumerate() {
                acc[t * n + c] = v as f32;
            }
        }
        a.insert_daily(ACCUM_TARGET, acc)?;
    }

    let dates = a.dates();
    for v in catalog.with_role(Role::CyclicForcing) {
        let src = cyclic_source(&v.name);
        let cycle = build_cyclic_forcing(src, a.cube(src)?, &dates, n, &cfg.train_years)?;
        a.insert_cycle(&v.name, to_f32(cycle))?;
    }

    a.climatology.clear();
    for v in catalog.outputs() {
        let table = build_climatology(&v.name, a.cube(&v.name)?, &dates, n, &cfg.train_years, cfg.pool_halfwidth)?;
        a.climatology.insert(v.name.clone(), table);
    }

    a.check_complete(catalog)?;
    a.stats = Some(NormStats::compute(&a, catalog, &cfg.train_years)?);
    let mut train = cfg.train_years.clone();
    train.sort_unstable();
    a.provenance.stage = Stage::Processed;
    a.provenance.train_years = train;
    a.provenance.catalog_hash = catalog.hash();
    Ok(a)
}
