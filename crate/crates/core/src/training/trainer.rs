use std::collections::BTreeSet;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, AdamW, AdamWParams};
use super::step::{train_mode, Emulator};
use crate::error::{Error, Result};
use crate::model::layers::Mode;
use crate::model::{DroughtFormer, ParamStore};
use crate::pipeline::Archive;
use crate::rng::{stream, tag};
use crate::tensor::no_grad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub single_step_epochs: usize,
    pub multistep_epochs: usize,
    pub rollout_steps: usize,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Epochs without validation improvement before a phase stops early.
    pub patience: Option<usize>,
    /// Random subset of the training dates used per epoch.
    pub max_samples_per_epoch: Option<usize>,
    /// Evenly spaced subset of the validation dates.
    pub max_val_samples: Option<usize>,
    /// Gradient norms above this are flagged in the step log.
    pub grad_norm_warn: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-4,
            lr_min: 0.0,
            l2: 1e-5,
            batch_size: 4,
            single_step_epochs: 120,
            multistep_epochs: 100,
            rollout_steps: 3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            patience: None,
            max_samples_per_epoch: None,
            max_val_samples: None,
            grad_norm_warn: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.lr_max > 0.0) || self.lr_min < 0.0 || self.lr_min > self.lr_max {
            return bad(format!("need 0 <= lr_min <= lr_max, lr_max > 0 (got {} / {})", self.lr_min, self.lr_max));
        }
        if self.rollout_steps == 0 {
            return bad("rollout_steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.l2 < 0.0 || !(0.0..1.0).contains(&self.betas[0]) || !(0.0..1.0).contains(&self.betas[1]) || self.eps <= 0.0 {
            return bad("invalid optimizer hyperparameters".into());
        }
        if self.max_samples_per_epoch == Some(0) || self.max_val_samples == Some(0) {
            return bad("sample limits must be positive".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
        }
    }

    /// `(rollout length, epochs)` of the single-step and multistep phases.
    pub fn phases(&self) -> [(usize, usize); 2] {
        [(1, self.single_step_epochs), (self.rollout_steps, self.multistep_epochs)]
    }
}

/// Position of a run, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub phase: usize,
    pub phase_epoch: usize,
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub phase_step: u64,
    pub stale_epochs: usize,
    pub stopped_early: bool,
    pub epoch_loss_sum: f64,
    pub epoch_grad_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rollout_steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub grad_norm_max: f64,
}

/// One optimizer step, as written to the structured log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub rollout_steps: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub grad_norm_warning: bool,
    pub moisture_residual: Option<f64>,
    pub dry_mass_residual: Option<f64>,
    pub clamped: usize,
    pub budget_flags: usize,
}

#[derive(Clone)]
pub struct Best {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ParamStore,
}

/// Candidate initialization dates. A date is used for a `k`-step rollout
/// when its last target day exists and falls in one of the candidate years.
pub struct TrainData<'a> {
    pub archive: &'a Archive,
    pub train_dates: Vec<NaiveDate>,
    pub val_dates: Vec<NaiveDate>,
}

impl<'a> TrainData<'a> {
    /// Every day of the training and validation years.
    pub fn from_years(archive: &'a Archive, train: &[i32], val: &[i32]) -> Self {
        let pick = |ys: &[i32]| archive.dates().into_iter().filter(|d| ys.contains(&d.year())).collect();
        Self {
            archive,
            train_dates: pick(train),
            val_dates: pick(val),
        }
    }

    fn usable(&self, dates: &[NaiveDate], k: usize) -> Vec<NaiveDate> {
        let years: BTreeSet<i32> = dates.iter().map(|d| d.year()).collect();
        let end = self.archive.end();
        dates
            .iter()
            .copied()
            .filter(|d| {
                let last = *d + Days::new(k as u64);
                last <= end && years.contains(&last.year())
            })
            .collect()
    }
}

pub struct Trainer {
    pub model: DroughtFormer,
    pub opt: AdamW,
    pub cfg: TrainConfig,
    pub seed: u64,
    pub progress: Progress,
    pub history: Vec<EpochRecord>,
    pub best: Option<Best>,
}

impl Trainer {
    pub fn new(model: DroughtFormer, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            opt: AdamW::new(cfg.adamw()),
            model,
            cfg,
            seed,
            progress: Progress::default(),
            history: Vec::new(),
            best: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.progress.phase >= 2
    }

    fn end_phase(&mut self) {
        if let Some(b) = &self.best {
            self.model.params = b.params.clone();
        }
        let p = &mut self.progress;
        p.phase += 1;
        p.phase_epoch = 0;
        p.phase_step = 0;
        p.batch = 0;
        p.stale_epochs = 0;
        p.stopped_early = false;
    }

    /// Trains until both phases finish, or until `max_steps` optimizer
    /// steps have run in this call. Calling again resumes where it stopped.
    pub fn fit(
        &mut self,
        emu: &Emulator,
        data: &TrainData,
        max_steps: Option<u64>,
        log: &mut dyn FnMut(&StepRecord),
    ) -> Result<()> {
        let mut taken = 0u64;
        while !self.is_done() {
            let (k, epochs) = self.cfg.phases()[self.progress.phase];
            if self.progress.phase_epoch >= epochs || self.progress.stopped_early {
                self.end_phase();
                continue;
            }
            let mut dates = data.usable(&data.train_dates, k);
            if dates.is_empty() {
                return Err(Error::Data(format!("no training dates support a {k}-day rollout")));
            }
            dates.shuffle(&mut stream(self.seed, &[tag::SHUFFLE, self.progress.epoch as u64]));
            if let Some(m) = self.cfg.max_samples_per_epoch {
                dates.truncate(m);
            }
            let n_batches = dates.len().div_ceil(self.cfg.batch_size);
            let total = (epochs * n_batches) as u64;
            if self.progress.phase_epoch == 0 && self.progress.batch == 0 {
                self.best = None;
            }
            while self.progress.batch < n_batches {
                if max_steps.is_some_and(|m| taken >= m) {
                    return Ok(());
                }
                let b = self.progress.batch;
                let batch = &dates[b * self.cfg.batch_size..((b + 1) * self.cfg.batch_size).min(dates.len())];
                let lr = cosine_lr(self.progress.phase_step, total, self.cfg.lr_max, self.cfg.lr_min);
                let rec = self.train_batch(emu, data.archive, batch, k, lr)?;
                log(&rec);
                let p = &mut self.progress;
                p.epoch_loss_sum += rec.loss;
                p.epoch_grad_max = p.epoch_grad_max.max(rec.grad_norm);
                p.batch += 1;
                p.step += 1;
                p.phase_step += 1;
                taken += 1;
            }
            let val_loss = self.validate(emu, data, k)?;
            let p = self.progress;
            self.history.push(EpochRecord {
                epoch: p.epoch,
                rollout_steps: k,
                lr: cosine_lr(p.phase_step.saturating_sub(1), total, self.cfg.lr_max, self.cfg.lr_min),
                train_loss: p.epoch_loss_sum / n_batches as f64,
                val_loss,
                grad_norm_max: p.epoch_grad_max,
            });
            if let Some(v) = val_loss {
                if self.best.as_ref().is_none_or(|b| v < b.val_loss) {
                    self.best = Some(Best {
                        epoch: p.epoch,
                        val_loss: v,
                        params: self.model.params.clone(),
                    });
                    self.progress.stale_epochs = 0;
                } else {
                    self.progress.stale_epochs += 1;
                }
            }
            let p = &mut self.progress;
            if self.cfg.patience.is_some_and(|pat| p.stale_epochs >= pat) {
                p.stopped_early = true;
            }
            p.batch = 0;
            p.phase_epoch += 1;
            p.epoch += 1;
            p.epoch_loss_sum = 0.0;
            p.epoch_grad_max = 0.0;
        }
        Ok(())
    }

    fn train_batch(&mut self, emu: &Emulator, archive: &Archive, batch: &[NaiveDate], k: usize, lr: f64) -> Result<StepRecord> {
        let step = self.progress.step;
        self.model.params.power_iterate();
        let ps = &self.model.params;
        ps.zero_grads();
        let inv = 1.0 / batch.len() as f64;
        let mut loss_sum = 0.0;
        let (mut moist, mut dry): (Option<f64>, Option<f64>) = (None, None);
        let (mut clamped, mut flags) = (0usize, 0usize);
        for (i, &date) in batch.iter().enumerate() {
            let sample = emu.sample(archive, date, k)?;
            let mut rng = stream(self.seed, &[tag::DROPOUT, step, i as u64]);
            let mut mode = train_mode(self.model.config.dropout, &mut rng);
            let (loss, reports) = emu.rollout_loss(&self.model.config, ps, &sample, &mut mode)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {l} at step {step} for init date {date}")));
            }
            loss.scale(inv).backward()?;
            loss_sum += l;
            for r in &reports {
                clamped += r.clamped;
                for (slot, rep) in [(&mut moist, &r.moisture), (&mut dry, &r.dry_mass)] {
                    if let Some(rep) = rep {
                        *slot = Some(slot.unwrap_or(0.0).max(rep.post_residual.abs()));
                        flags += usize::from(rep.flag.is_some());
                    }
                }
            }
        }
        let grads = ps.grads();
        let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm at step {step}")));
        }
        self.opt.apply(&mut self.model.params, &grads, lr, self.cfg.l2)?;
        Ok(StepRecord {
            epoch: self.progress.epoch,
            step,
            rollout_steps: k,
            lr,
            loss: loss_sum * inv,
            grad_norm: norm,
            grad_norm_warning: norm > self.cfg.grad_norm_warn,
            moisture_residual: moist,
            dry_mass_residual: dry,
            clamped,
            budget_flags: flags,
        })
    }

    /// Mean `k`-step rollout loss over the validation dates, or `None`
    /// without any.
    pub fn validate(&self, emu: &Emulator, data: &TrainData, k: usize) -> Result<Option<f64>> {
        let dates = data.usable(&data.val_dates, k);
        if dates.is_empty() {
            return Ok(None);
        }
        let stride = match self.cfg.max_val_samples {
            Some(m) if m < dates.len() => dates.len().div_ceil(m),
            _ => 1,
        };
        let picked: Vec<NaiveDate> = dates.into_iter().step_by(stride).collect();
        let mut sum = 0.0;
        for &d in &picked {
            let sample = emu.sample(data.archive, d, k)?;
            let l = no_grad(|| emu.rollout_loss(&self.model.config, &self.model.params, &sample, &mut Mode::eval()))?
                .0
                .item();
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite validation loss for init date {d}")));
            }
            sum += l;
        }
        Ok(Some(sum / picked.len() as f64))
    }
}
