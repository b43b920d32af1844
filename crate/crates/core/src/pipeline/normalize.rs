//! Per-variable z-scoring with training-period global statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::archive::Archive;
use super::catalog::{VariableCatalog, VariableDef};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub years: Vec<i32>,
    pub vars: BTreeMap<String, VarStats>,
}

fn two_pass(values: impl Iterator<Item = f64> + Clone) -> Option<VarStats> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.clone().filter(|v| !v.is_nan()) {
        s += v;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mean = s / n as f64;
    let ss: f64 = values.filter(|v| !v.is_nan()).map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / n as f64).sqrt();
    Some(VarStats {
        mean,
        std: if std > 0.0 { std } else { 1.0 },
    })
}

impl NormStats {
    /// Global mean and population std of every catalog variable over the
    /// days of `years`. A constant variable gets std 1.
    pub fn compute(archive: &Archive, catalog: &VariableCatalog, years: &[i32]) -> Result<Self> {
        let days = archive.days_in_years(years);
        if days.is_empty() {
            return Err(Error::Data("normalization: no archive days in the training years".into()));
        }
        let dates = archive.dates();
        let n = archive.n_cells();
        let mut vars = BTreeMap::new();
        for v in catalog.vars() {
            let stats = if let Ok(cube) = archive.cube(&v.name) {
                two_pass(days.iter().flat_map(|&d| cube[d * n..(d + 1) * n].iter().map(|&x| f64::from(x))))
            } else if let Some(f) = archive.statics.get(&v.name) {
                two_pass(f.iter().map(|&x| f64::from(x)))
            } else if let Some(s) = archive.scalars.get(&v.name) {
                two_pass(days.iter().map(|&d| s[d]))
            } else if let Some(c) = archive.cycles.get(&v.name) {
                two_pass(days.iter().flat_map(|&d| {
                    let slot = super::calendar::doy_slot(dates[d]);
                    c[slot * n..(slot + 1) * n].iter().map(|&x| f64::from(x))
                }))
            } else {
                return Err(Error::Data(format!("normalization: archive has no {}", v.name)));
            };
            let stats = stats.ok_or_else(|| Error::Data(format!("normalization: {} is all missing", v.name)))?;
            vars.insert(v.name.clone(), stats);
        }
        let mut years = years.to_vec();
        years.sort_unstable();
        Ok(Self { years, vars })
    }

    pub fn get(&self, name: &str) -> Result<VarStats> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("no normalization stats for {name}")))
    }
}

/// Channel-wise affine maps between physical and normalized stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    out_mean: Vec<f64>,
    out_std: Vec<f64>,
}

fn channel_stats(vars: &[&VariableDef], stats: &NormStats) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::with_capacity(vars.len());
    let mut std = Vec::with_capacity(vars.len());
    for v in vars {
        if v.categorical {
            mean.push(0.0);
            std.push(1.0);
        } else {
            let s = stats.get(&v.name)?;
            mean.push(s.mean);
            std.push(s.std);
        }
    }
    Ok((mean, std))
}

impl Normalizer {
    pub fn new(catalog: &VariableCatalog, stats: &NormStats) -> Result<Self> {
        let (in_mean, in_std) = channel_stats(&catalog.inputs(), stats)?;
        let (out_mean, out_std) = channel_stats(&catalog.outputs(), stats)?;
        Ok(Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        })
    }

    /// Identity maps, for stacks already in model units.
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            in_mean: vec![0.0; n_in],
            in_std: vec![1.0; n_in],
            out_mean: vec![0.0; n_out],
            out_std: vec![1.0; n_out],
        }
    }

    fn forward(x: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = mean.iter().zip(std).map(|(m, s)| -m / s).collect();
        x.channel_affine(&scale, &shift)
    }

    pub fn normalize_input(&self, x: &Tensor) -> Result<Tensor> {
        Self::forward(x, &self.in_mean, &self.in_std)
    }

    pub fn denormalize_input(&self, x: &Tensor) -> Result<Tensor> {
        x.channel_affine(&self.in_std, &self.in_mean)
    }

    pub fn normalize_output(&self, x: &Tensor) -> Result<Tensor> {
        Self::forward(x, &self.out_mean, &self.out_std)
    }

    pub fn denormalize_output(&self, x: &Tensor) -> Result<Tensor> {
        x.channel_affine(&self.out_std, &self.out_mean)
    }

    pub fn output_std(&self) -> &[f64] {
        &self.out_std
    }
}
