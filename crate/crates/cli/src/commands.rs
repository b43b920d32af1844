//! The six pipeline commands. Each reads the resolved configuration and
//! writes its artifacts under the output directory together with a
//! `provenance.json` naming the configuration hash, seed and code version.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use droughtformer::evaluation::{
    rollout_evaluate, scorecard_export, Climatology, EvalConfig, Forecaster, ModelForecaster, Persistence, RegionMask,
    SkillReport,
};
use droughtformer::indices::{
    annual_fdii, forecast_indices, sequence_indices, truth_sequence, write_event_table, FdiiResult, IndexClimatology,
    SeriesSource, SequenceIndices, SM_LAYERS,
};
use droughtformer::pipeline::calendar::{days_in_year, year_start};
use droughtformer::pipeline::grd1::{read_field, write_field, Dtype, FieldMeta};
use droughtformer::pipeline::{preprocess, synth_generate, Archive, GridSpec, Normalizer, PreprocessConfig, Stage, VariableCatalog};
use droughtformer::rng::{derive_seed, stream, tag};
use droughtformer::training::{load_checkpoint, save_checkpoint, Emulator, TrainData, Trainer};
use droughtformer::{DroughtFormer, Error, Result, Tensor, CODE_VERSION};
use serde::{Deserialize, Serialize};

use crate::config::{ForecasterKind, RunConfig};

/// Resolved configuration plus where to write.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub hash: String,
    pub catalog: VariableCatalog,
}

impl Context {
    /// Validates the configuration before anything is written.
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        if cfg.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must be below 2^63".into()));
        }
        cfg.validate()?;
        Ok(Self {
            hash: cfg.hash()?,
            cfg,
            out,
            catalog: VariableCatalog::standard(),
        })
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoint")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub command: String,
    pub config_hash: String,
    /// Decimal string.
    pub seed: String,
    pub code_version: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_provenance(ctx: &Context, dir: &Path, command: &str, extra: BTreeMap<String, String>) -> Result<()> {
    mkdir(dir)?;
    let p = RunProvenance {
        command: command.into(),
        config_hash: ctx.hash.clone(),
        seed: ctx.cfg.seed.to_string(),
        code_version: CODE_VERSION.into(),
        extra,
    };
    let path = dir.join("provenance.json");
    let text = serde_json::to_string_pretty(&p).map_err(|e| Error::Data(e.to_string()))? + "\n";
    fs::write(&path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, ctx.cfg.to_toml()?).map_err(|e| Error::Data(format!("{}: {e}", cfg_path.display())))
}

pub fn read_provenance(dir: &Path) -> Option<RunProvenance> {
    let text = fs::read_to_string(dir.join("provenance.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Removes an earlier archive at `dir`; refuses to touch anything else.
fn clear_archive_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    let empty = fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(false);
    if empty {
        return Ok(());
    }
    if !dir.join("manifest.toml").exists() {
        return Err(Error::Data(format!("{} exists and is not an archive", dir.display())));
    }
    fs::remove_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn check_years(archive: &Archive, years: &[i32], what: &str) -> Result<()> {
    let have = archive.years();
    match years.iter().find(|y| !have.contains(y)) {
        Some(y) => Err(Error::Data(format!("{what} year {y} is not in the archive ({have:?})"))),
        None => Ok(()),
    }
}

pub fn cmd_synth(ctx: &Context) -> Result<PathBuf> {
    let dir = ctx.cfg.raw_dir(&ctx.out);
    let mut raw = synth_generate(&ctx.cfg.synth, derive_seed(ctx.cfg.seed, &[tag::SYNTH]))?;
    raw.provenance.config_hash = ctx.hash.clone();
    clear_archive_dir(&dir)?;
    raw.save(&dir, &ctx.catalog)?;
    Ok(dir)
}

pub fn cmd_preprocess(ctx: &Context) -> Result<PathBuf> {
    let raw = Archive::load(&ctx.cfg.raw_dir(&ctx.out))?;
    check_years(&raw, &ctx.cfg.data.split.all_years(), "split")?;
    let pcfg = PreprocessConfig {
        coarsen_factor: ctx.cfg.data.coarsen_factor,
        pool_halfwidth: ctx.cfg.data.pool_halfwidth,
        accumulation: ctx.cfg.data.accumulation,
        train_years: ctx.cfg.data.split.train.clone(),
    };
    let mut a = preprocess(&raw, &ctx.catalog, &pcfg)?;
    a.provenance.config_hash = ctx.hash.clone();
    a.provenance.code_version = CODE_VERSION.into();
    let dir = ctx.cfg.archive_dir(&ctx.out);
    clear_archive_dir(&dir)?;
    a.save(&dir, &ctx.catalog)?;
    Ok(dir)
}

/// The processed archive, checked against the catalog and the split.
pub fn load_archive(ctx: &Context) -> Result<Archive> {
    let a = Archive::load(&ctx.cfg.archive_dir(&ctx.out))?;
    if a.provenance.stage != Stage::Processed || a.stats.is_none() {
        return Err(Error::Data("archive is not preprocessed; run preprocess first".into()));
    }
    if a.provenance.catalog_hash != ctx.catalog.hash() {
        return Err(Error::Config(format!(
            "archive was built for catalog {}, current catalog is {}",
            a.provenance.catalog_hash,
            ctx.catalog.hash()
        )));
    }
    check_years(&a, &ctx.cfg.data.split.all_years(), "split")?;
    Ok(a)
}

fn emulator(ctx: &Context, archive: &Archive) -> Result<Emulator> {
    let stats = archive.stats.as_ref().expect("checked by load_archive");
    Emulator::new(ctx.catalog.clone(), Normalizer::new(&ctx.catalog, stats)?, ctx.cfg.physics.clone(), &archive.grid)
}

/// A trainer from the checkpoint that matches the configuration.
fn load_trained(ctx: &Context) -> Result<Trainer> {
    let dir = ctx.checkpoint_dir();
    if !dir.join("manifest.toml").exists() {
        return Err(Error::Data(format!("no checkpoint at {}; run train first", dir.display())));
    }
    let t = load_checkpoint(&dir, Some(&ctx.catalog.hash()))?;
    if t.model.config != ctx.cfg.model {
        return Err(Error::Config("checkpoint model settings differ from [model]".into()));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub done: bool,
    pub best_val_loss: Option<f64>,
}

/// Trains (or resumes) and writes the checkpoint plus JSONL step and epoch
/// logs under `<out>/train`.
pub fn cmd_train(ctx: &Context, resume: bool, max_steps: Option<u64>) -> Result<TrainSummary> {
    let archive = load_archive(ctx)?;
    let emu = emulator(ctx, &archive)?;
    let ckpt = ctx.checkpoint_dir();
    let resuming = resume && ckpt.join("manifest.toml").exists();
    let mut trainer = if resuming {
        let t = load_trained(ctx)?;
        if t.cfg != ctx.cfg.train || t.seed != ctx.cfg.seed {
            return Err(Error::Config("checkpoint training settings or seed differ from the configuration".into()));
        }
        t
    } else {
        let model = DroughtFormer::new(ctx.cfg.model.clone(), &mut stream(ctx.cfg.seed, &[tag::MODEL_INIT]))?;
        Trainer::new(model, ctx.cfg.train.clone(), ctx.cfg.seed)?
    };
    let split = &ctx.cfg.data.split;
    let data = TrainData::from_years(&archive, &split.train, &split.validation);

    let log_dir = ctx.out.join("train");
    mkdir(&log_dir)?;
    let steps_path = log_dir.join("steps.jsonl");
    let mut steps = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&steps_path)
        .map_err(|e| Error::Data(format!("{}: {e}", steps_path.display())))?;
    let mut write_err = None;
    let fit = trainer.fit(&emu, &data, max_steps, &mut |rec| {
        let line = serde_json::to_string(rec).expect("step record serializes");
        if let Err(e) = writeln!(steps, "{line}") {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(Error::Data(format!("{}: {e}", steps_path.display())));
    }
    fit?;
    save_checkpoint(&trainer, &ctx.catalog.hash(), &ckpt)?;
    let epochs: String = trainer
        .history
        .iter()
        .map(|h| serde_json::to_string(h).expect("epoch record serializes") + "\n")
        .collect();
    let epochs_path = log_dir.join("epochs.jsonl");
    fs::write(&epochs_path, epochs).map_err(|e| Error::Data(format!("{}: {e}", epochs_path.display())))?;
    write_provenance(ctx, &ckpt, "train", BTreeMap::new())?;
    Ok(TrainSummary {
        steps: trainer.progress.step,
        epochs: trainer.history.len(),
        done: trainer.is_done(),
        best_val_loss: trainer.best.as_ref().map(|b| b.val_loss),
    })
}

/// Writes `[C_out, H, W]` stacks as one `[n, lat, lon]` field per output
/// variable, the first valid on `first`.
fn write_stacks(dir: &Path, catalog: &VariableCatalog, grid: &GridSpec, first: NaiveDate, stacks: &[Tensor], role: &str) -> Result<()> {
    mkdir(dir)?;
    let n = grid.n_cells();
    for (ch, v) in catalog.outputs().iter().enumerate() {
        let values: Vec<f64> = stacks.iter().flat_map(|s| s.data()[ch * n..(ch + 1) * n].iter().copied()).collect();
        let meta = FieldMeta {
            variable: &v.name,
            units: &v.units,
            role,
            source: "droughtformer",
            dim_names: &["lead", "lat", "lon"],
            dims: vec![stacks.len(), grid.n_lat(), grid.n_lon()],
            start_date: Some(first),
            dtype: Dtype::F64,
        };
        write_field(dir, &v.name, meta, grid, &values)?;
    }
    Ok(())
}

/// Rollout from `init` for `leads` days, written to
/// `<out>/predict/<init>`.
pub fn cmd_predict(ctx: &Context, init: NaiveDate, leads: usize) -> Result<PathBuf> {
    if leads == 0 {
        return Err(Error::Config("predict: leads must be at least 1".into()));
    }
    let archive = load_archive(ctx)?;
    let trainer = load_trained(ctx)?;
    let emu = emulator(ctx, &archive)?;
    if init < archive.start || init + Days::new(leads as u64 - 1) > archive.end() {
        return Err(Error::Data(format!("predict: forcings for {init} + {leads} days are not in the archive")));
    }
    let f = ModelForecaster {
        model: &trainer.model,
        emulator: &emu,
    };
    // The last step needs no forcing, so the archive may end one day early.
    let stacks = f.forecast(&archive, init, leads)?;
    let dir = ctx.out.join("predict").join(init.to_string());
    write_stacks(&dir, &ctx.catalog, &archive.grid, init + Days::new(1), &stacks[1..], "forecast")?;
    let extra = BTreeMap::from([("init".to_string(), init.to_string()), ("leads".to_string(), leads.to_string())]);
    write_provenance(ctx, &dir, "predict", extra)?;
    Ok(dir)
}

/// Reads a prediction directory back as `(init, per-day fields)`.
pub fn read_rollout(dir: &Path, names: &[&str]) -> Result<(NaiveDate, Vec<BTreeMap<String, Vec<f64>>>)> {
    let mut days: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    let mut first: Option<NaiveDate> = None;
    for &name in names {
        let (h, values) = read_field(dir, name)?;
        let start = h
            .start_date
            .ok_or_else(|| Error::Data(format!("{}: {name} has no start date", dir.display())))?;
        if *first.get_or_insert(start) != start || (!days.is_empty() && days.len() != h.dims[0]) {
            return Err(Error::Data(format!("{}: fields disagree on dates", dir.display())));
        }
        let n = h.lat.len() * h.lon.len();
        days.resize_with(h.dims[0], BTreeMap::new);
        for (j, day) in days.iter_mut().enumerate() {
            day.insert(name.to_string(), values[j * n..(j + 1) * n].to_vec());
        }
    }
    let first = first.ok_or_else(|| Error::Data("read_rollout: no fields requested".into()))?;
    Ok((first - Days::new(1), days))
}

fn write_grid(dir: &Path, stem: &str, grid: &GridSpec, first: Option<NaiveDate>, dims: Vec<usize>, names: &[&str], values: &[f64]) -> Result<()> {
    let meta = FieldMeta {
        variable: stem,
        units: "1",
        role: "index",
        source: "droughtformer",
        dim_names: names,
        dims,
        start_date: first,
        dtype: Dtype::F64,
    };
    write_field(dir, stem, meta, grid, values).map(|_| ())
}

fn write_fdii(dir: &Path, stem: &str, grid: &GridSpec, results: &[FdiiResult]) -> Result<()> {
    let dims = vec![grid.n_lat(), grid.n_lon()];
    let fdii: Vec<f64> = results.iter().map(|r| r.fdii).collect();
    write_grid(dir, &format!("fdii_{stem}"), grid, None, dims, &["lat", "lon"], &fdii)?;
    write_event_table(&dir.join(format!("events_{stem}.csv")), results)
}

fn write_sequence(dir: &Path, grid: &GridSpec, ix: &SequenceIndices, layers: &[String]) -> Result<()> {
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let sesr: Vec<f64> = ix.sesr.iter().flatten().copied().collect();
    write_grid(dir, "sesr", grid, Some(ix.first), vec![ix.sesr.len(), h, w], &["time", "lat", "lon"], &sesr)?;
    for layer in layers {
        if let Some(p) = ix.sm_percentile.get(layer) {
            write_grid(dir, &format!("pct_{layer}"), grid, p.starts.first().copied(), vec![p.len(), h, w], &["pentad", "lat", "lon"], &p.values)?;
        }
        if let Some(r) = ix.fdii.get(layer) {
            write_fdii(dir, layer, grid, r)?;
        }
    }
    Ok(())
}

pub enum IndexSource {
    Archive,
    Rollout(PathBuf),
}

/// SESR, soil-moisture percentiles and FDII of the archive years or of a
/// prediction directory, under `<out>/indices`.
pub fn cmd_indices(ctx: &Context, source: &IndexSource) -> Result<Vec<PathBuf>> {
    let archive = load_archive(ctx)?;
    let ic = &ctx.cfg.indices;
    let clim = IndexClimatology::build(&archive, &ctx.cfg.data.split.train, ic.pool_halfwidth)?;
    let root = ctx.out.join("indices");
    let mut written = Vec::new();
    match source {
        IndexSource::Archive => {
            let years = ctx.cfg.index_years();
            check_years(&archive, &years, "indices")?;
            for year in years {
                let dir = root.join(format!("analysis_{year}"));
                mkdir(&dir)?;
                let before = year_start(year) - Days::new(1);
                let n = days_in_year(year).min(archive.end().signed_duration_since(before).num_days() as usize);
                let days = truth_sequence(&archive, before, n)?;
                let ix = sequence_indices(year_start(year), &days, &clim, &ic.fdii, SeriesSource::Analysis)?;
                write_sequence(&dir, &archive.grid, &SequenceIndices { fdii: BTreeMap::new(), ..ix }, &[])?;
                for layer in &ic.layers {
                    let (pct, res) = annual_fdii(&archive, &clim, layer, year, &ic.fdii)?;
                    let (h, w) = (archive.grid.n_lat(), archive.grid.n_lon());
                    write_grid(&dir, &format!("pct_{layer}"), &archive.grid, pct.starts.first().copied(), vec![pct.len(), h, w], &["pentad", "lat", "lon"], &pct.values)?;
                    write_fdii(&dir, layer, &archive.grid, &res)?;
                }
                write_provenance(ctx, &dir, "indices", BTreeMap::from([("year".to_string(), year.to_string())]))?;
                written.push(dir);
            }
        }
        IndexSource::Rollout(pred) => {
            let names: Vec<&str> = ["evap", "pevap"].into_iter().chain(SM_LAYERS).collect();
            let (init, days) = read_rollout(pred, &names)?;
            let ix = forecast_indices(init, &days, &clim, &ic.fdii)?;
            let dir = root.join(format!("forecast_{init}"));
            mkdir(&dir)?;
            write_sequence(&dir, &archive.grid, &ix, &ic.layers)?;
            let mut extra = BTreeMap::from([("init".to_string(), init.to_string())]);
            if let Some(p) = read_provenance(pred) {
                extra.insert("rollout_config_hash".into(), p.config_hash);
            }
            write_provenance(ctx, &dir, "indices", extra)?;
            written.push(dir);
        }
    }
    Ok(written)
}

/// A forecaster reported under another name.
struct Renamed<'a> {
    inner: &'a dyn Forecaster,
    name: &'static str,
}

impl Forecaster for Renamed<'_> {
    fn name(&self) -> &str {
        self.name
    }

    fn forecast(&self, archive: &Archive, init: NaiveDate, max_lead: usize) -> Result<Vec<Tensor>> {
        self.inner.forecast(archive, init, max_lead)
    }
}

/// Rollout evaluation over the test years; scorecards go to `<out>/eval`.
pub fn cmd_evaluate(ctx: &Context, forecaster: Option<ForecasterKind>) -> Result<SkillReport> {
    let archive = load_archive(ctx)?;
    let e = &ctx.cfg.eval;
    let kind = forecaster.unwrap_or(e.forecaster);
    let masks = e
        .masks
        .iter()
        .map(|m| RegionMask::by_name(m, &archive))
        .collect::<Result<Vec<_>>>()?;
    let clim = Climatology { catalog: &ctx.catalog };
    let pers = Persistence { catalog: &ctx.catalog };
    let trained = match kind {
        ForecasterKind::Model => Some((load_trained(ctx)?, emulator(ctx, &archive)?)),
        _ => None,
    };
    let model_fc = trained.as_ref().map(|(t, emu)| ModelForecaster {
        model: &t.model,
        emulator: emu,
    });
    let inner: &dyn Forecaster = match kind {
        ForecasterKind::Model => model_fc.as_ref().expect("loaded above"),
        ForecasterKind::Climatology => &clim,
        ForecasterKind::Persistence => &pers,
    };
    let primary = Renamed { inner, name: "model" };
    let mut sources: Vec<&dyn Forecaster> = vec![&primary];
    for b in &e.baselines {
        sources.push(if b == "climatology" { &clim } else { &pers });
    }
    let cfg = EvalConfig {
        years: ctx.cfg.data.split.test.clone(),
        leads: e.leads.clone(),
        variables: e.variables.clone(),
        init_stride: e.init_stride,
        max_inits: e.max_inits,
        anomaly_reference: e.anomaly_reference,
    };
    let report = rollout_evaluate(&archive, &ctx.catalog, &sources, &masks, &cfg)?;
    let dir = ctx.out.join("eval");
    let meta = BTreeMap::from([
        ("config_hash".to_string(), ctx.hash.clone()),
        ("seed".to_string(), ctx.cfg.seed.to_string()),
        ("code_version".to_string(), CODE_VERSION.to_string()),
        ("forecaster".to_string(), format!("{kind:?}").to_lowercase()),
        ("test_years".to_string(), format!("{:?}", cfg.years)),
    ]);
    scorecard_export(&report, &dir, &meta)?;
    write_provenance(ctx, &dir, "evaluate", BTreeMap::new())?;
    Ok(report)
}

