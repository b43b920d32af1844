//! Checkpoint directory: `manifest.toml` plus raw little-endian f64
//! payloads for parameters, optimizer moments, spectral-norm vectors and
//! the best-epoch parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamW;
use super::trainer::{Best, EpochRecord, Progress, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{DroughtFormer, ModelConfig, ParamStore};
use crate::tensor::SpectralState;

pub const CHECKPOINT_FORMAT: &str = "droughtformer-checkpoint";
const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectralEntry {
    name: String,
    u: usize,
    v: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    file: String,
    values: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BestEntry {
    epoch: usize,
    val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    catalog_hash: String,
    /// Decimal string; TOML integers are signed 64-bit.
    seed: String,
    optimizer_step: u64,
    model: ModelConfig,
    train: TrainConfig,
    progress: Progress,
    best: Option<BestEntry>,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
    spectral: Vec<SpectralEntry>,
    payloads: BTreeMap<String, Payload>,
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_payload(dir: &Path, key: &str, values: &[f64], out: &mut BTreeMap<String, Payload>) -> Result<()> {
    let bytes = encode(values);
    let file = format!("{key}.f64");
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    out.insert(
        key.to_string(),
        Payload {
            file,
            values: values.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        },
    );
    Ok(())
}

fn read_payload(dir: &Path, key: &str, m: &Manifest) -> Result<Vec<f64>> {
    let p = m
        .payloads
        .get(key)
        .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("no payload {key}")))?;
    let path = dir.join(&p.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != 8 * p.values || hex::encode(Sha256::digest(&bytes)) != p.sha256 {
        return Err(Error::format(&path, "payload size or checksum mismatch"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn flatten(ps: &ParamStore) -> Vec<f64> {
    ps.iter().flat_map(|(_, t)| t.to_vec()).collect()
}

fn flatten_moments(ps: &ParamStore, map: &BTreeMap<String, Vec<f64>>) -> Vec<f64> {
    ps.iter()
        .flat_map(|(name, t)| map.get(name).cloned().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect()
}

/// Writes parameters into `ps` in name order.
fn unflatten(ps: &mut ParamStore, values: &[f64]) -> Result<()> {
    let layout: Vec<(String, usize)> = ps.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    let mut off = 0;
    for (name, n) in layout {
        let chunk = values
            .get(off..off + n)
            .ok_or_else(|| Error::Data("checkpoint: parameter payload too short".into()))?;
        ps.set_values(&name, chunk.to_vec())?;
        off += n;
    }
    if off != values.len() {
        return Err(Error::Data("checkpoint: parameter payload too long".into()));
    }
    Ok(())
}

pub fn save_checkpoint(trainer: &Trainer, catalog_hash: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ps = &trainer.model.params;
    let mut payloads = BTreeMap::new();
    write_payload(dir, "params", &flatten(ps), &mut payloads)?;
    if trainer.opt.step > 0 {
        write_payload(dir, "adam_m", &flatten_moments(ps, &trainer.opt.m), &mut payloads)?;
        write_payload(dir, "adam_v", &flatten_moments(ps, &trainer.opt.v), &mut payloads)?;
    }
    let spectral: Vec<SpectralEntry> = ps
        .spectral_states()
        .iter()
        .map(|(name, st)| SpectralEntry {
            name: name.clone(),
            u: st.u.len(),
            v: st.v.len(),
        })
        .collect();
    let sv: Vec<f64> = ps
        .spectral_states()
        .values()
        .flat_map(|st| st.u.iter().chain(&st.v).copied())
        .collect();
    write_payload(dir, "spectral", &sv, &mut payloads)?;
    if let Some(b) = &trainer.best {
        write_payload(dir, "best_params", &flatten(&b.params), &mut payloads)?;
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        catalog_hash: catalog_hash.into(),
        seed: trainer.seed.to_string(),
        optimizer_step: trainer.opt.step,
        model: trainer.model.config.clone(),
        train: trainer.cfg.clone(),
        progress: trainer.progress,
        best: trainer.best.as_ref().map(|b| BestEntry {
            epoch: b.epoch,
            val_loss: b.val_loss,
        }),
        history: trainer.history.clone(),
        tensors: ps
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        spectral,
        payloads,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Restores a trainer. With `expected_catalog` set, a checkpoint built for
/// a different variable catalog is rejected.
pub fn load_checkpoint(dir: &Path, expected_catalog: Option<&str>) -> Result<Trainer> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT || m.version != 1 {
        return Err(Error::format(&path, format!("unsupported checkpoint {} v{}", m.format, m.version)));
    }
    if let Some(h) = expected_catalog {
        if h != m.catalog_hash {
            return Err(Error::Config(format!(
                "checkpoint was trained for catalog {}, current catalog is {h}",
                m.catalog_hash
            )));
        }
    }
    let seed: u64 = m.seed.parse().map_err(|_| Error::format(&path, "bad seed"))?;
    let mut model = DroughtFormer::new(m.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let layout: Vec<TensorEntry> = model
        .params
        .iter()
        .map(|(n, t)| TensorEntry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if layout != m.tensors {
        return Err(Error::format(&path, "parameter layout does not match the model configuration"));
    }
    unflatten(&mut model.params, &read_payload(dir, "params", &m)?)?;

    let sv = read_payload(dir, "spectral", &m)?;
    let mut off = 0;
    for e in &m.spectral {
        let take = |off: &mut usize, n: usize| -> Result<Vec<f64>> {
            let s = sv
                .get(*off..*off + n)
                .ok_or_else(|| Error::format(&path, "spectral payload too short"))?
                .to_vec();
            *off += n;
            Ok(s)
        };
        let u = take(&mut off, e.u)?;
        let v = take(&mut off, e.v)?;
        model.params.set_spectral_state(&e.name, SpectralState { u, v })?;
    }
    if off != sv.len() || m.spectral.len() != model.params.spectral_states().len() {
        return Err(Error::format(&path, "spectral states do not match the model"));
    }

    let mut opt = AdamW::new(m.train.adamw());
    opt.step = m.optimizer_step;
    if m.optimizer_step > 0 {
        for (key, slot) in [("adam_m", &mut opt.m), ("adam_v", &mut opt.v)] {
            let flat = read_payload(dir, key, &m)?;
            let mut off = 0;
            for (name, t) in model.params.iter() {
                let n = t.numel();
                let chunk = flat
                    .get(off..off + n)
                    .ok_or_else(|| Error::format(&path, format!("{key} payload too short")))?;
                slot.insert(name.to_string(), chunk.to_vec());
                off += n;
            }
        }
    }
    let best = match &m.best {
        Some(b) => {
            let mut params = model.params.clone();
            unflatten(&mut params, &read_payload(dir, "best_params", &m)?)?;
            Some(Best {
                epoch: b.epoch,
                val_loss: b.val_loss,
                params,
            })
        }
        None => None,
    };
    m.train.validate()?;
    Ok(Trainer {
        model,
        opt,
        cfg: m.train,
        seed,
        progress: m.progress,
        history: m.history,
        best,
    })
}

/// Catalog hash recorded in a checkpoint.
pub fn checkpoint_catalog(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(m.catalog_hash)
}
