//! The run configuration: one TOML document with a section per stage.
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use droughtformer::evaluation::AnomalyReference;
use droughtformer::indices::FdiiConfig;
use droughtformer::physics::PhysicsConfig;
use droughtformer::pipeline::{AccumulationMode, DatasetSplit, SynthConfig, VariableCatalog, DEFAULT_POOL_HALFWIDTH};
use droughtformer::training::TrainConfig;
use droughtformer::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub physics: PhysicsConfig,
    pub eval: EvalSection,
    pub indices: IndicesSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            data: DataSection::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::tiny(),
            train: TrainConfig::default(),
            physics: PhysicsConfig::default(),
            eval: EvalSection::default(),
            indices: IndicesSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw archive directory; `<out>/raw` when unset.
    pub raw: Option<PathBuf>,
    /// Processed archive directory; `<out>/archive` when unset.
    pub archive: Option<PathBuf>,
    pub split: DatasetSplit,
    pub coarsen_factor: usize,
    pub pool_halfwidth: usize,
    pub accumulation: AccumulationMode,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            raw: None,
            archive: None,
            split: DatasetSplit {
                train: vec![2001],
                validation: vec![2002],
                test: vec![2003],
            },
            coarsen_factor: 1,
            pool_halfwidth: DEFAULT_POOL_HALFWIDTH,
            accumulation: AccumulationMode::Total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    /// The trained emulator from the checkpoint.
    #[default]
    Model,
    /// Emits the day-of-year climatology.
    Climatology,
    /// Repeats the initial state.
    Persistence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `africa` and/or `global`.
    pub masks: Vec<String>,
    pub leads: Vec<usize>,
    /// Output variables to score; empty means all.
    pub variables: Vec<String>,
    /// `climatology` and/or `persistence`.
    pub baselines: Vec<String>,
    /// What the `model` rows are produced by.
    pub forecaster: ForecasterKind,
    pub init_stride: usize,
    pub max_inits: Option<usize>,
    pub anomaly_reference: AnomalyReference,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            masks: vec!["africa".into(), "global".into()],
            leads: vec![1, 2, 3, 5, 7, 10, 15, 20, 30, 45, 60, 75, 90],
            variables: Vec::new(),
            baselines: vec!["climatology".into(), "persistence".into()],
            forecaster: ForecasterKind::Model,
            init_stride: 1,
            max_inits: None,
            anomaly_reference: AnomalyReference::AnnualMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicesSection {
    /// Soil layers whose percentiles feed FDII.
    pub layers: Vec<String>,
    /// Years indexed from the archive; the test years when empty.
    pub years: Vec<i32>,
    pub pool_halfwidth: usize,
    pub fdii: FdiiConfig,
}

impl Default for IndicesSection {
    fn default() -> Self {
        Self {
            layers: vec!["sm1".into()],
            years: Vec::new(),
            pool_halfwidth: DEFAULT_POOL_HALFWIDTH,
            fdii: FdiiConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Cross-section checks against the standard variable catalog.
    pub fn validate(&self) -> Result<()> {
        let cat = VariableCatalog::standard();
        self.data.split.validate()?;
        if self.data.coarsen_factor == 0 {
            return Err(Error::Config("data: coarsen_factor must be at least 1".into()));
        }
        self.synth.validate()?;
        self.model.validate()?;
        if self.model.in_channels != cat.n_inputs() || self.model.out_channels != cat.n_outputs() {
            return Err(Error::Config(format!(
                "model: {} inputs / {} outputs, the catalog has {} / {}",
                self.model.in_channels,
                self.model.out_channels,
                cat.n_inputs(),
                cat.n_outputs()
            )));
        }
        self.train.validate()?;
        self.physics.validate()?;
        self.indices.fdii.validate()?;
        let e = &self.eval;
        if e.leads.is_empty() || e.init_stride == 0 || e.max_inits == Some(0) {
            return Err(Error::Config("eval: need leads, init_stride >= 1 and max_inits >= 1".into()));
        }
        for m in &e.masks {
            if m != "africa" && m != "global" {
                return Err(Error::Config(format!("eval: unknown mask {m:?}")));
            }
        }
        if e.masks.is_empty() {
            return Err(Error::Config("eval: no masks".into()));
        }
        for b in &e.baselines {
            if b != "climatology" && b != "persistence" {
                return Err(Error::Config(format!("eval: unknown baseline {b:?}")));
            }
        }
        for v in &e.variables {
            cat.output_index(v).map_err(|_| Error::Config(format!("eval: {v} is not an output variable")))?;
        }
        for l in &self.indices.layers {
            if !droughtformer::indices::SM_LAYERS.contains(&l.as_str()) {
                return Err(Error::Config(format!("indices: {l} is not a soil-moisture layer")));
            }
        }
        Ok(())
    }

    pub fn raw_dir(&self, out: &Path) -> PathBuf {
        self.data.raw.clone().unwrap_or_else(|| out.join("raw"))
    }

    pub fn archive_dir(&self, out: &Path) -> PathBuf {
        self.data.archive.clone().unwrap_or_else(|| out.join("archive"))
    }

    pub fn index_years(&self) -> Vec<i32> {
        if self.indices.years.is_empty() {
            self.data.split.test.clone()
        } else {
            self.indices.years.clone()
        }
    }
}
