//! In-memory archive of gridded daily fields, statics, scalar climate
//! indices and derived tables, plus channel assembly for the emulator.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::calendar::{date_range, doy_slot, year_start, DOY_SLOTS};
use super::catalog::{Level, Role, VariableCatalog};
use super::climatology::ClimatologyTable;
use super::normalize::NormStats;
use super::GridSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// As ingested or generated: may hold gaps, fine grids, no derived tables.
    #[default]
    Raw,
    /// Coarsened, gap-filled, with climatologies and normalization stats.
    Processed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub stage: Stage,
    pub source: String,
    pub seed: Option<u64>,
    /// Years the climatologies and statistics were computed from.
    pub train_years: Vec<i32>,
    pub catalog_hash: String,
    /// Hash of the run configuration that produced the archive, if any.
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub grid: GridSpec,
    pub start: NaiveDate,
    pub n_days: usize,
    /// Time-major `[n_days, n_cells]` fields.
    pub daily: BTreeMap<String, Vec<f32>>,
    /// Time-invariant `[n_cells]` fields.
    pub statics: BTreeMap<String, Vec<f32>>,
    /// Daily scalar series such as climate indices.
    pub scalars: BTreeMap<String, Vec<f64>>,
    /// Day-of-year cycles, `[366, n_cells]`.
    pub cycles: BTreeMap<String, Vec<f32>>,
    pub climatology: BTreeMap<String, ClimatologyTable>,
    pub stats: Option<NormStats>,
    pub provenance: Provenance,
}

impl Archive {
    /// Empty archive covering whole calendar years.
    pub fn for_years(grid: GridSpec, years: &[i32]) -> Result<Self> {
        let (&first, &last) = years
            .iter()
            .min()
            .zip(years.iter().max())
            .ok_or_else(|| Error::Config("archive: no years".into()))?;
        let start = year_start(first);
        let n_days = (year_start(last + 1) - start).num_days() as usize;
        Ok(Self::new(grid, start, n_days))
    }

    pub fn new(grid: GridSpec, start: NaiveDate, n_days: usize) -> Self {
        Self {
            grid,
            start,
            n_days,
            daily: BTreeMap::new(),
            statics: BTreeMap::new(),
            scalars: BTreeMap::new(),
            cycles: BTreeMap::new(),
            climatology: BTreeMap::new(),
            stats: None,
            provenance: Provenance::default(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        date_range(self.start, self.n_days)
    }

    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.n_days as u64 - 1)
    }

    /// Calendar years with at least one day in the archive.
    pub fn years(&self) -> Vec<i32> {
        (self.start.year()..=self.end().year()).collect()
    }

    pub fn day_index(&self, date: NaiveDate) -> Result<usize> {
        let i = (date - self.start).num_days();
        if i < 0 || i as usize >= self.n_days {
            return Err(Error::Data(format!(
                "date {date} outside archive {}..={}",
                self.start,
                self.end()
            )));
        }
        Ok(i as usize)
    }

    /// Row indices of all days falling in `years`.
    pub fn days_in_years(&self, years: &[i32]) -> Vec<usize> {
        self.dates()
            .iter()
            .enumerate()
            .filter(|(_, d)| years.contains(&d.year()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn insert_daily(&mut self, name: &str, cube: Vec<f32>) -> Result<()> {
        if cube.len() != self.n_days * self.n_cells() {
            return Err(Error::Data(format!(
                "{name}: {} values for {} days x {} cells",
                cube.len(),
                self.n_days,
                self.n_cells()
            )));
        }
        self.daily.insert(name.to_string(), cube);
        Ok(())
    }

    pub fn insert_static(&mut self, name: &str, field: Vec<f32>) -> Result<()> {
        if field.len() != self.n_cells() {
            return Err(Error::Data(format!("{name}: static field of {} values", field.len())));
        }
        self.statics.insert(name.to_string(), field);
        Ok(())
    }

    pub fn insert_scalar(&mut self, name: &str, series: Vec<f64>) -> Result<()> {
        if series.len() != self.n_days {
            return Err(Error::Data(format!("{name}: {} values for {} days", series.len(), self.n_days)));
        }
        self.scalars.insert(name.to_string(), series);
        Ok(())
    }

    pub fn insert_cycle(&mut self, name: &str, cycle: Vec<f32>) -> Result<()> {
        if cycle.len() != DOY_SLOTS * self.n_cells() {
            return Err(Error::Data(format!("{name}: cycle of {} values", cycle.len())));
        }
        self.cycles.insert(name.to_string(), cycle);
        Ok(())
    }

    /// Whole daily cube of a variable.
    pub fn cube(&self, name: &str) -> Result<&[f32]> {
        self.daily
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("archive has no daily field {name}")))
    }

    /// One day of a daily variable.
    pub fn daily_field(&self, name: &str, day: usize) -> Result<&[f32]> {
        let n = self.n_cells();
        let cube = self.cube(name)?;
        cube.get(day * n..(day + 1) * n)
            .ok_or_else(|| Error::Data(format!("{name}: day {day} outside archive")))
    }

    /// Value of any variable on a date as a grid field: daily fields as
    /// stored, statics unchanged, scalars broadcast and cycles indexed by
    /// the day of year.
    pub fn field(&self, name: &str, date: NaiveDate) -> Result<Vec<f64>> {
        let day = self.day_index(date)?;
        let n = self.n_cells();
        if self.daily.contains_key(name) {
            return Ok(self.daily_field(name, day)?.iter().map(|&v| f64::from(v)).collect());
        }
        if let Some(f) = self.statics.get(name) {
            return Ok(f.iter().map(|&v| f64::from(v)).collect());
        }
        if let Some(s) = self.scalars.get(name) {
            return Ok(vec![s[day]; n]);
        }
        if let Some(c) = self.cycles.get(name) {
            let slot = doy_slot(date);
            return Ok(c[slot * n..(slot + 1) * n].iter().map(|&v| f64::from(v)).collect());
        }
        Err(Error::Data(format!("archive has no variable {name}")))
    }

    fn stack(&self, names: &[&str], date: NaiveDate) -> Result<Tensor> {
        let mut data = Vec::with_capacity(names.len() * self.n_cells());
        for name in names {
            let f = self.field(name, date)?;
            if f.iter().any(|v| v.is_nan()) {
                return Err(Error::Data(format!("{name} has missing values on {date}")));
            }
            data.extend(f);
        }
        Tensor::new(vec![names.len(), self.grid.n_lat(), self.grid.n_lon()], data)
    }

    /// Physical-unit input stack `[n_inputs, H, W]` in catalog order.
    pub fn assemble_input(&self, catalog: &VariableCatalog, date: NaiveDate) -> Result<Tensor> {
        let names: Vec<&str> = catalog.inputs().iter().map(|v| v.name.as_str()).collect();
        self.stack(&names, date)
    }

    /// Physical-unit output stack `[n_outputs, H, W]` in catalog order.
    pub fn assemble_output(&self, catalog: &VariableCatalog, date: NaiveDate) -> Result<Tensor> {
        let names: Vec<&str> = catalog.outputs().iter().map(|v| v.name.as_str()).collect();
        self.stack(&names, date)
    }

    /// Daily variables the catalog expects to find gridded in the archive.
    pub fn expected_daily(catalog: &VariableCatalog) -> Vec<String> {
        catalog
            .vars()
            .iter()
            .filter(|v| matches!(v.role, Role::Prognostic | Role::DynamicForcing | Role::Diagnostic))
            .filter(|v| v.level != Level::Scalar)
            .map(|v| v.name.clone())
            .collect()
    }

    /// Checks that every catalog variable is present in the right form.
    pub fn check_complete(&self, catalog: &VariableCatalog) -> Result<()> {
        for v in catalog.vars() {
            let present = match v.role {
                Role::Static => self.statics.contains_key(&v.name),
                Role::CyclicForcing => self.cycles.contains_key(&v.name),
                _ if v.level == Level::Scalar => self.scalars.contains_key(&v.name),
                _ => self.daily.contains_key(&v.name),
            };
            if !present {
                return Err(Error::Data(format!("archive is missing {}", v.name)));
            }
        }
        Ok(())
    }
}

/// Splits a `[C, H, W]` stack back into named fields using the catalog's
/// input or output order.
pub fn disassemble(stack: &Tensor, catalog: &VariableCatalog, outputs: bool) -> Result<BTreeMap<String, Vec<f64>>> {
    let vars = if outputs { catalog.outputs() } else { catalog.inputs() };
    let [c, h, w] = *stack.shape() else {
        return Err(Error::Shape(format!("disassemble: expected [C, H, W], got {:?}", stack.shape())));
    };
    if c != vars.len() {
        return Err(Error::Shape(format!("disassemble: {c} channels for {} variables", vars.len())));
    }
    let n = h * w;
    Ok(vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), stack.data()[i * n..(i + 1) * n].to_vec()))
        .collect())
}
