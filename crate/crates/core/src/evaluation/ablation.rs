//! Upsampling method × constraint ablation: train and score one model per
//! combination with identical data, seed and budget.

use std::collections::BTreeMap;
use std::path::Path;

use super::forecaster::{Climatology, Forecaster, ModelForecaster, Persistence};
use super::mask::RegionMask;
use super::rollout::{rollout_evaluate, EvalConfig, SkillReport};
use super::scorecard::scorecard_export;
use crate::error::Result;
use crate::model::{DroughtFormer, ModelConfig, UpsampleMethod};
use crate::physics::PhysicsConfig;
use crate::pipeline::{Archive, Normalizer, VariableCatalog};
use crate::rng::{stream, tag};
use crate::training::{Emulator, TrainConfig, TrainData, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub upsample: UpsampleMethod,
    pub constraints: bool,
}

impl AblationVariant {
    /// Every upsampling method with constraints on and off.
    pub fn all() -> Vec<Self> {
        UpsampleMethod::ALL
            .into_iter()
            .flat_map(|upsample| [true, false].map(|constraints| Self { upsample, constraints }))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.upsample.as_str(), if self.constraints { "on" } else { "off" })
    }
}

pub struct AblationSetup<'a> {
    pub archive: &'a Archive,
    pub catalog: &'a VariableCatalog,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Constraint settings used by the `on` variants.
    pub physics: PhysicsConfig,
    pub train_years: Vec<i32>,
    pub val_years: Vec<i32>,
    pub eval: EvalConfig,
    pub masks: Vec<RegionMask>,
    pub seed: u64,
}

pub struct AblationResult {
    pub variant: AblationVariant,
    pub final_train_loss: Option<f64>,
    pub report: SkillReport,
}

/// Trains and evaluates each variant. With `out` set, each scorecard goes
/// to `out/<label>/`.
pub fn run_ablation(setup: &AblationSetup, variants: &[AblationVariant], out: Option<&Path>) -> Result<Vec<AblationResult>> {
    let stats = setup
        .archive
        .stats
        .as_ref()
        .ok_or_else(|| crate::error::Error::Data("ablation needs a preprocessed archive".into()))?;
    let normalizer = Normalizer::new(setup.catalog, stats)?;
    let data = TrainData::from_years(setup.archive, &setup.train_years, &setup.val_years);
    let mut results = Vec::with_capacity(variants.len());
    for &variant in variants {
        let physics = if variant.constraints { setup.physics.clone() } else { PhysicsConfig::all_off() };
        let emu = Emulator::new(setup.catalog.clone(), normalizer.clone(), physics, &setup.archive.grid)?;
        let cfg = ModelConfig {
            upsample_method: variant.upsample,
            ..setup.model.clone()
        };
        let model = DroughtFormer::new(cfg, &mut stream(setup.seed, &[tag::MODEL_INIT]))?;
        let mut trainer = Trainer::new(model, setup.train.clone(), setup.seed)?;
        trainer.fit(&emu, &data, None, &mut |_| {})?;
        let mf = ModelForecaster {
            model: &trainer.model,
            emulator: &emu,
        };
        let clim = Climatology { catalog: setup.catalog };
        let pers = Persistence { catalog: setup.catalog };
        let sources: [&dyn Forecaster; 3] = [&mf, &clim, &pers];
        let report = rollout_evaluate(setup.archive, setup.catalog, &sources, &setup.masks, &setup.eval)?;
        if let Some(dir) = out {
            let meta = BTreeMap::from([
                ("upsample_method".to_string(), variant.upsample.as_str().to_string()),
                ("constraints".to_string(), variant.constraints.to_string()),
                ("seed".to_string(), setup.seed.to_string()),
            ]);
            scorecard_export(&report, &dir.join(variant.label()), &meta)?;
        }
        results.push(AblationResult {
            variant,
            final_train_loss: trainer.history.last().map(|h| h.train_loss),
            report,
        });
    }
    Ok(results)
}
