//! Post-prediction corrections: non-negativity clamps and global
//! column-moisture and dry-air-mass budgets.
//!
//! States are `[C, H, W]` tensors in physical units laid out as the output
//! stack; the previous state may be an input stack, since prognostic
//! channels share positions in both. All corrections are differentiable so
//! they can sit between the network and the loss.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::pipeline::VariableCatalog;
use crate::tensor::Tensor;

/// Standard gravity, m s-2.
pub const GRAVITY: f64 = 9.80665;
/// Pressure thickness represented by the 500 mb level, Pa.
pub const DP_500: f64 = 40_000.0;
/// Pressure thickness represented by the 200 mb level, Pa.
pub const DP_200: f64 = 25_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub clamp_nonneg: bool,
    pub conserve_moisture: bool,
    pub conserve_dry_mass: bool,
    /// Largest precipitation scaling that is applied.
    pub r_max: f64,
    /// Model step in days.
    pub dt_days: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            clamp_nonneg: true,
            conserve_moisture: true,
            conserve_dry_mass: true,
            r_max: 10.0,
            dt_days: 1.0,
        }
    }
}

impl PhysicsConfig {
    pub fn all_off() -> Self {
        Self {
            clamp_nonneg: false,
            conserve_moisture: false,
            conserve_dry_mass: false,
            ..Self::default()
        }
    }

    pub fn any(&self) -> bool {
        self.clamp_nonneg || self.conserve_moisture || self.conserve_dry_mass
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max > 0.0) || !(self.dt_days > 0.0) {
            return Err(Error::Config("physics: r_max and dt_days must be positive".into()));
        }
        Ok(())
    }
}

/// Why a correction was skipped or limited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetFlag {
    /// Demanded scaling was negative; precipitation set to zero.
    ClampedToZero,
    /// Demanded scaling exceeded `r_max`; nothing applied.
    ExceedsMax,
    /// No precipitation to scale although a sink is required.
    NoPrecipitation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    /// Global residual before correction (mm/day or Pa).
    pub pre_residual: f64,
    pub post_residual: f64,
    pub scale_applied: f64,
    /// Surface-pressure offset, Pa.
    pub offset_applied: f64,
    pub flag: Option<BudgetFlag>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReports {
    /// Values raised to zero by the clamp.
    pub clamped: usize,
    pub moisture: Option<BudgetReport>,
    pub dry_mass: Option<BudgetReport>,
}

impl ConstraintReports {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Channel positions used by the corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsLayout {
    pub precip: usize,
    pub evap: usize,
    pub sp: usize,
    pub q500: usize,
    pub q200: usize,
    pub nonneg: Vec<usize>,
}

impl PhysicsLayout {
    pub fn from_catalog(cat: &VariableCatalog) -> Result<Self> {
        Ok(Self {
            precip: cat.output_index("precip_1d")?,
            evap: cat.output_index("evap")?,
            sp: cat.output_index("sp")?,
            q500: cat.output_index("qtot500")?,
            q200: cat.output_index("qtot200")?,
            nonneg: cat.nonneg_outputs(),
        })
    }
}

fn plane(x: &Tensor) -> Result<(usize, usize)> {
    let [c, h, w] = *x.shape() else {
        return Err(shape_err!("physics: expected [C, H, W], got {:?}", x.shape()));
    };
    Ok((c, h * w))
}

/// Weighted mean `sum(w x) / sum(w)` of one channel, as a one-element
/// tensor.
pub fn channel_mean(x: &Tensor, ch: usize, weights: &[f64]) -> Result<Tensor> {
    let (c, n) = plane(x)?;
    if ch >= c || weights.len() != n {
        return Err(shape_err!("channel_mean: channel {ch} of {c}, {} weights for {n} cells", weights.len()));
    }
    let wsum: f64 = weights.iter().sum();
    let vals = &x.data()[ch * n..(ch + 1) * n];
    let m = vals.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let weights = weights.to_vec();
    let total = x.numel();
    Ok(Tensor::from_op(vec![1], vec![m], vec![x.clone()], "channel_mean", move |g, _, _| {
        let mut gx = vec![0.0; total];
        for (slot, w) in gx[ch * n..(ch + 1) * n].iter_mut().zip(&weights) {
            *slot = g[0] * w / wsum;
        }
        vec![Some(gx)]
    }))
}

/// Column water `w500 q500 + w200 q200`, kg m-2, as a `[1, H, W]` tensor.
pub fn column_moisture(state: &Tensor, layout: &PhysicsLayout) -> Result<Tensor> {
    let q5 = state.slice_channels(layout.q500, layout.q500 + 1)?;
    let q2 = state.slice_channels(layout.q200, layout.q200 + 1)?;
    q5.scale(DP_500 / GRAVITY).add(&q2.scale(DP_200 / GRAVITY))
}

/// Weighted global mean of column water.
fn mean_column_moisture(state: &Tensor, layout: &PhysicsLayout, weights: &[f64]) -> Result<Tensor> {
    let m = column_moisture(state, layout)?;
    channel_mean(&m, 0, weights)
}

/// Weighted global mean of the dry-air pressure `p_s - g M_w`.
pub fn mean_dry_pressure(state: &Tensor, layout: &PhysicsLayout, weights: &[f64]) -> Result<Tensor> {
    let sp = channel_mean(state, layout.sp, weights)?;
    let m = mean_column_moisture(state, layout, weights)?;
    sp.sub(&m.scale(GRAVITY))
}

/// Replaces channel `ch` of `x` with `new` (`[1, H, W]`).
fn replace_channel(x: &Tensor, ch: usize, new: &Tensor) -> Result<Tensor> {
    let c = x.shape()[0];
    let mut parts = Vec::with_capacity(3);
    if ch > 0 {
        parts.push(x.slice_channels(0, ch)?);
    }
    parts.push(new.clone());
    if ch + 1 < c {
        parts.push(x.slice_channels(ch + 1, c)?);
    }
    Tensor::concat_channels(&parts)
}

/// Sets negative values of the listed channels to zero.
pub fn clamp_nonnegative(state: &Tensor, channels: &[usize]) -> Result<(Tensor, usize)> {
    let (c, n) = plane(state)?;
    if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
        return Err(shape_err!("clamp: channel {bad} of {c}"));
    }
    let mut mask = vec![false; c * n];
    for &ch in channels {
        mask[ch * n..(ch + 1) * n].iter_mut().for_each(|m| *m = true);
    }
    let mut clamped = 0;
    let data: Vec<f64> = state
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| {
            if m && v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    let out = Tensor::from_op(
        state.shape().to_vec(),
        data,
        vec![state.clone()],
        "clamp_nonnegative",
        move |g, inp, _| {
            let gx = g
                .iter()
                .zip(inp[0].data())
                .zip(&mask)
                .map(|((g, v), m)| if *m && *v < 0.0 { 0.0 } else { *g })
                .collect();
            vec![Some(gx)]
        },
    );
    Ok((out, clamped))
}

/// Global moisture residual `<dM/dt - E + P>` between two states.
pub fn moisture_residual(prev: &Tensor, pred: &Tensor, layout: &PhysicsLayout, weights: &[f64], dt: f64) -> Result<f64> {
    let dm = mean_column_moisture(pred, layout, weights)?.item() - mean_column_moisture(prev, layout, weights)?.item();
    let e = channel_mean(pred, layout.evap, weights)?.item();
    let p = channel_mean(pred, layout.precip, weights)?.item();
    Ok(dm / dt - e + p)
}

/// Rescales precipitation by a global factor so that the column-water
/// change balances evaporation minus precipitation.
pub fn conserve_moisture(
    prev: &Tensor,
    pred: &Tensor,
    layout: &PhysicsLayout,
    weights: &[f64],
    cfg: &PhysicsConfig,
) -> Result<(Tensor, BudgetReport)> {
    let dt = cfg.dt_days;
    let pre = moisture_residual(prev, pred, layout, weights, dt)?;
    let dm = mean_column_moisture(pred, layout, weights)?.sub(&mean_column_moisture(prev, layout, weights)?)?;
    let e = channel_mean(pred, layout.evap, weights)?;
    let p = channel_mean(pred, layout.precip, weights)?;
    // required mean precipitation
    let need = e.sub(&dm.scale(1.0 / dt))?;
    let skip = |flag| {
        Ok((
            pred.clone(),
            BudgetReport {
                pre_residual: pre,
                post_residual: pre,
                scale_applied: 1.0,
                offset_applied: 0.0,
                flag,
            },
        ))
    };
    if p.item() == 0.0 {
        let scale = e.item().abs().max(dm.item().abs() / dt).max(1.0);
        let flag = (need.item().abs() > 1e-12 * scale).then_some(BudgetFlag::NoPrecipitation);
        return skip(flag);
    }
    let r = need.div(&p)?;
    let (r, flag) = if r.item() < 0.0 {
        (Tensor::scalar(0.0), Some(BudgetFlag::ClampedToZero))
    } else if r.item() > cfg.r_max {
        return skip(Some(BudgetFlag::ExceedsMax));
    } else {
        (r, None)
    };
    let precip = pred
        .slice_channels(layout.precip, layout.precip + 1)?
        .mul_scalar_tensor(&r)?;
    let out = replace_channel(pred, layout.precip, &precip)?;
    let post = moisture_residual(prev, &out, layout, weights, dt)?;
    Ok((
        out,
        BudgetReport {
            pre_residual: pre,
            post_residual: post,
            scale_applied: r.item(),
            offset_applied: 0.0,
            flag,
        },
    ))
}

/// Adds a uniform surface-pressure offset so the global dry-air pressure
/// matches the previous state.
pub fn conserve_dry_mass(prev: &Tensor, pred: &Tensor, layout: &PhysicsLayout, weights: &[f64]) -> Result<(Tensor, BudgetReport)> {
    let before = mean_dry_pressure(pred, layout, weights)?;
    let target = mean_dry_pressure(prev, layout, weights)?;
    let delta = target.sub(&before)?;
    let sp = pred
        .slice_channels(layout.sp, layout.sp + 1)?
        .add_scalar_tensor(&delta)?;
    let out = replace_channel(pred, layout.sp, &sp)?;
    let post = mean_dry_pressure(&out, layout, weights)?.item() - target.item();
    Ok((
        out,
        BudgetReport {
            pre_residual: -delta.item(),
            post_residual: post,
            scale_applied: 1.0,
            offset_applied: delta.item(),
            flag: None,
        },
    ))
}

/// Clamp, then moisture, then dry mass, each when enabled.
pub fn apply_constraints(
    prev: &Tensor,
    pred: &Tensor,
    layout: &PhysicsLayout,
    weights: &[f64],
    cfg: &PhysicsConfig,
) -> Result<(Tensor, ConstraintReports)> {
    let mut reports = ConstraintReports::default();
    let mut x = pred.clone();
    if cfg.clamp_nonneg {
        let (y, n) = clamp_nonnegative(&x, &layout.nonneg)?;
        x = y;
        reports.clamped = n;
    }
    if cfg.conserve_moisture {
        let (y, r) = conserve_moisture(prev, &x, layout, weights, cfg)?;
        x = y;
        reports.moisture = Some(r);
    }
    if cfg.conserve_dry_mass {
        let (y, r) = conserve_dry_mass(prev, &x, layout, weights)?;
        x = y;
        reports.dry_mass = Some(r);
    }
    Ok((x, reports))
}
