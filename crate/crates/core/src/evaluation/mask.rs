use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Archive, GridSpec};

/// Bounding box of the African mask: latitude then longitude ranges.
pub const AFRICA_LAT: [f64; 2] = [-35.0, 38.0];
pub const AFRICA_LON: [f64; 2] = [-18.0, 52.0];

/// A named set of grid cells with their area weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub name: String,
    pub cells: Vec<bool>,
    /// Area weight inside the mask, 0 outside.
    pub weights: Vec<f64>,
}

impl RegionMask {
    pub fn new(name: &str, grid: &GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.n_cells() {
            return Err(Error::Data(format!("mask {name}: {} flags for {} cells", cells.len(), grid.n_cells())));
        }
        if !cells.iter().any(|&b| b) {
            return Err(Error::Data(format!("mask {name} selects no cells")));
        }
        let weights = grid
            .area_weights()
            .into_iter()
            .zip(&cells)
            .map(|(w, &m)| if m { w } else { 0.0 })
            .collect();
        Ok(Self {
            name: name.into(),
            cells,
            weights,
        })
    }

    /// Every cell, sea included.
    pub fn global(grid: &GridSpec) -> Result<Self> {
        Self::new("global", grid, vec![true; grid.n_cells()])
    }

    /// Land cells (`lsm >= 0.5`) inside the African bounding box.
    pub fn africa(grid: &GridSpec, lsm: &[f64]) -> Result<Self> {
        if lsm.len() != grid.n_cells() {
            return Err(Error::Data("africa mask: land-sea field does not match the grid".into()));
        }
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        let cells = grid
            .lat
            .iter()
            .flat_map(|&la| grid.lon.iter().map(move |&lo| (la, lo)))
            .zip(lsm)
            .map(|((la, lo), &l)| l >= 0.5 && inside(la, AFRICA_LAT) && inside(lo, AFRICA_LON))
            .collect();
        Self::new("africa", grid, cells)
    }

    /// `global` or `africa`, the latter from the archive's land-sea mask.
    pub fn by_name(name: &str, archive: &Archive) -> Result<Self> {
        match name {
            "global" => Self::global(&archive.grid),
            "africa" => {
                let lsm: Vec<f64> = archive
                    .statics
                    .get("lsm")
                    .ok_or_else(|| Error::Data("africa mask needs the lsm static field".into()))?
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect();
                Self::africa(&archive.grid, &lsm)
            }
            other => Err(Error::Config(format!("unknown mask {other:?}; expected global or africa"))),
        }
    }

    pub fn n_selected(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Weighted mean over the mask.
    pub fn mean(&self, field: &[f64]) -> f64 {
        let (s, w) = field
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .fold((0.0, 0.0), |(s, tw), (v, &w)| (s + v * w, tw + w));
        s / w
    }
}
