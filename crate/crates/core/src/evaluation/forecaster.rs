//! Forecast sources: the trained emulator and the two reference baselines.
//! Every source returns physical output stacks `[C_out, H, W]`, entry `L`
//! valid `L` days after initialization.

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};
use crate::model::layers::Mode;
use crate::model::DroughtFormer;
use crate::pipeline::{Archive, ClimatologyTable, VariableCatalog};
use crate::tensor::{no_grad, Tensor};
use crate::training::Emulator;

pub trait Forecaster: Sync {
    fn name(&self) -> &str;

    /// Stacks for leads `0..=max_lead`.
    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>>;
}

fn valid(init: NaiveDate, lead: usize) -> NaiveDate {
    init + Days::new(lead as u64)
}

/// Climatological mean for the day of year of `date + lead`, one field per
/// output variable in catalog order.
pub fn climatology_forecast(
    archive: &Archive,
    catalog: &VariableCatalog,
    date: NaiveDate,
    lead: usize,
) -> Result<Tensor> {
    let target = valid(date, lead);
    let mut data = Vec::with_capacity(catalog.n_outputs() * archive.n_cells());
    for v in catalog.outputs() {
        data.extend_from_slice(climatology_table(archive, &v.name)?.mean_on(target));
    }
    Tensor::new(vec![catalog.n_outputs(), archive.grid.n_lat(), archive.grid.n_lon()], data)
}

pub(crate) fn climatology_table<'a>(archive: &'a Archive, name: &str) -> Result<&'a ClimatologyTable> {
    archive
        .climatology
        .get(name)
        .ok_or_else(|| Error::Data(format!("archive has no climatology for {name}; run preprocess first")))
}

/// The initial output state repeated at every lead.
pub fn persistence_forecast(init_state: &Tensor, max_lead: usize) -> Vec<Tensor> {
    vec![init_state.clone(); max_lead + 1]
}

pub struct Persistence<'a> {
    pub catalog: &'a VariableCatalog,
}

impl Forecaster for Persistence<'_> {
    fn name(&self) -> &str {
        "persistence"
    }

    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>> {
        Ok(persistence_forecast(&archive.assemble_output(self.catalog, init)?, max_lead))
    }
}

pub struct Climatology<'a> {
    pub catalog: &'a VariableCatalog,
}

impl Forecaster for Climatology<'_> {
    fn name(&self) -> &str {
        "climatology"
    }

    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>> {
        (0..=max_lead)
            .map(|l| climatology_forecast(archive, self.catalog, init, l))
            .collect()
    }
}

/// Constrained autoregressive rollout of the emulator. Lead 0 is the
/// analysis at initialization; forcing channels for later steps are read
/// from the archive at their valid dates.
pub struct ModelForecaster<'a> {
    pub model: &'a DroughtFormer,
    pub emulator: &'a Emulator,
}

impl Forecaster for ModelForecaster<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>> {
        let emu = self.emulator;
        no_grad(|| {
            let mut out = Vec::with_capacity(max_lead + 1);
            out.push(archive.assemble_output(&emu.catalog, init)?);
            let mut x = emu.input_at(archive, init)?;
            for lead in 1..=max_lead {
                let (y, _) = emu.step(&self.model.config, &self.model.params, &x, &mut Mode::eval())?;
                if y.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("rollout from {init} is not finite at lead {lead}")));
                }
                out.push(emu.normalizer.denormalize_output(&y)?);
                if lead < max_lead {
                    x = emu.next_input(&y, &emu.input_at(archive, valid(init, lead))?)?;
                }
            }
            Ok(out)
        })
    }
}

/// Any closure over `(archive, init, max_lead)`; used for oracle models.
pub struct FnForecaster<F> {
    pub name: String,
    pub f: F,
}

impl<F> Forecaster for FnForecaster<F>
where
    F: Fn(&Archive, NaiveDate, usize) -> Result<Vec<Tensor>> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>> {
        (self.f)(archive, init, max_lead)
    }
}
