//! One constrained model step in normalized space, autoregressive
//! chaining, and the rollout loss.

use chrono::{Datelike, Days, NaiveDate};
use rand::RngCore;

use super::loss::latitude_weighted_mse;
use crate::error::{Error, Result};
use crate::model::layers::Mode;
use crate::model::{forward_with, ModelConfig, ParamStore};
use crate::physics::{apply_constraints, ConstraintReports, PhysicsConfig, PhysicsLayout};
use crate::pipeline::{Archive, GridSpec, Normalizer, VariableCatalog};
use crate::tensor::Tensor;

/// Everything besides the parameters needed to advance a state by a day.
#[derive(Debug, Clone)]
pub struct Emulator {
    pub catalog: VariableCatalog,
    pub normalizer: Normalizer,
    pub physics: PhysicsConfig,
    pub layout: PhysicsLayout,
    pub cell_weights: Vec<f64>,
    pub row_weights: Vec<f64>,
    pub n_prognostic: usize,
}

impl Emulator {
    pub fn new(catalog: VariableCatalog, normalizer: Normalizer, physics: PhysicsConfig, grid: &GridSpec) -> Result<Self> {
        physics.validate()?;
        let n_prognostic = catalog.n_prognostic();
        let (ins, outs) = (catalog.inputs(), catalog.outputs());
        for i in 0..n_prognostic {
            if ins[i].name != outs[i].name {
                return Err(Error::Config(format!(
                    "catalog: prognostic channel {i} is {} in the input stack but {} in the output stack",
                    ins[i].name, outs[i].name
                )));
            }
        }
        let layout = PhysicsLayout::from_catalog(&catalog)?;
        Ok(Self {
            catalog,
            normalizer,
            physics,
            layout,
            cell_weights: grid.area_weights(),
            row_weights: grid.row_weights(),
            n_prognostic,
        })
    }

    /// Applies the enabled constraints to a normalized prediction, with the
    /// normalized input as the previous state.
    pub fn constrain(&self, x_norm: &Tensor, pred_norm: &Tensor) -> Result<(Tensor, ConstraintReports)> {
        if !self.physics.any() {
            return Ok((pred_norm.clone(), ConstraintReports::default()));
        }
        let prev = self.normalizer.denormalize_input(x_norm)?;
        let pred = self.normalizer.denormalize_output(pred_norm)?;
        let (fixed, reports) = apply_constraints(&prev, &pred, &self.layout, &self.cell_weights, &self.physics)?;
        Ok((self.normalizer.normalize_output(&fixed)?, reports))
    }

    /// Model forward plus constraints.
    pub fn step(&self, cfg: &ModelConfig, ps: &ParamStore, x_norm: &Tensor, mode: &mut Mode) -> Result<(Tensor, ConstraintReports)> {
        let raw = forward_with(cfg, ps, x_norm, mode)?;
        self.constrain(x_norm, &raw)
    }

    /// Next input stack: predicted prognostic channels followed by the
    /// forcing channels of `forcing_norm`.
    pub fn next_input(&self, pred_norm: &Tensor, forcing_norm: &Tensor) -> Result<Tensor> {
        let p = self.n_prognostic;
        let c = forcing_norm.shape()[0];
        Tensor::concat_channels(&[pred_norm.slice_channels(0, p)?, forcing_norm.slice_channels(p, c)?])
    }

    /// Mean latitude-weighted loss over a `k`-step constrained rollout.
    pub fn rollout_loss(
        &self,
        cfg: &ModelConfig,
        ps: &ParamStore,
        sample: &Sample,
        mode: &mut Mode,
    ) -> Result<(Tensor, Vec<ConstraintReports>)> {
        let k = sample.targets.len();
        if k == 0 || sample.forcings.len() + 1 != k {
            return Err(Error::Data("sample: inconsistent rollout length".into()));
        }
        let mut x = sample.input.clone();
        let mut total: Option<Tensor> = None;
        let mut reports = Vec::with_capacity(k);
        for j in 0..k {
            let (y, rep) = self.step(cfg, ps, &x, mode)?;
            reports.push(rep);
            let l = latitude_weighted_mse(&y, &sample.targets[j], &self.row_weights)?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
            if j + 1 < k {
                x = self.next_input(&y, &sample.forcings[j])?;
            }
        }
        let loss = total.expect("k >= 1").scale(1.0 / k as f64);
        Ok((loss, reports))
    }

    pub fn input_at(&self, archive: &Archive, date: NaiveDate) -> Result<Tensor> {
        self.normalizer.normalize_input(&archive.assemble_input(&self.catalog, date)?)
    }

    pub fn target_at(&self, archive: &Archive, date: NaiveDate) -> Result<Tensor> {
        self.normalizer.normalize_output(&archive.assemble_output(&self.catalog, date)?)
    }

    /// Normalized input at `date`, forcing stacks for the following `k - 1`
    /// days and targets for the following `k` days.
    pub fn sample(&self, archive: &Archive, date: NaiveDate, k: usize) -> Result<Sample> {
        let day = |j: usize| date + Days::new(j as u64);
        Ok(Sample {
            date,
            input: self.input_at(archive, date)?,
            forcings: (1..k).map(|j| self.input_at(archive, day(j))).collect::<Result<_>>()?,
            targets: (1..=k).map(|j| self.target_at(archive, day(j))).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub date: NaiveDate,
    pub input: Tensor,
    pub forcings: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

/// Initialization dates in `years` (every `stride`-th) whose `k`-day
/// rollout also stays inside `years` and the archive.
pub fn init_dates(archive: &Archive, years: &[i32], k: usize, stride: usize) -> Vec<NaiveDate> {
    let dates = archive.dates();
    let inside = |d: &NaiveDate| years.contains(&d.year());
    dates
        .iter()
        .enumerate()
        .filter(|(i, d)| inside(d) && i + k < dates.len() && inside(&dates[i + k]))
        .map(|(_, d)| *d)
        .step_by(stride.max(1))
        .collect()
}

/// Training-mode forward options.
pub fn train_mode(dropout: f64, rng: &mut dyn RngCore) -> Mode<'_> {
    Mode {
        dropout,
        rng: Some(rng),
    }
}
