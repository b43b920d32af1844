//! Skill metrics on masked, area-weighted fields and the Diebold-Mariano
//! test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Model anomaly variance below this leaves RPC undefined.
pub const RPC_VAR_EPS: f64 = 1e-12;

fn check(a: &[f64], b: &[f64], w: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != w.len() {
        return Err(Error::Data(format!("metric: lengths {} / {} / {} differ", a.len(), b.len(), w.len())));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::Data("metric: weights sum to zero".into()));
    }
    Ok(())
}

fn wmean(x: &[f64], w: &[f64]) -> f64 {
    let (s, t) = x.iter().zip(w).fold((0.0, 0.0), |(s, t), (x, w)| (s + x * w, t + w));
    s / t
}

/// Square root of the weighted mean squared difference.
pub fn rmse(pred: &[f64], truth: &[f64], weights: &[f64]) -> Result<f64> {
    check(pred, truth, weights)?;
    let se: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).collect();
    Ok(wmean(&se, weights).sqrt())
}

/// Weighted correlation of the two anomaly fields after removing their
/// weighted means. `None` when either field is constant over the mask.
pub fn acc(pred_anom: &[f64], truth_anom: &[f64], weights: &[f64]) -> Result<Option<f64>> {
    check(pred_anom, truth_anom, weights)?;
    let (mp, mt) = (wmean(pred_anom, weights), wmean(truth_anom, weights));
    let (mut spt, mut spp, mut stt) = (0.0, 0.0, 0.0);
    for ((p, t), w) in pred_anom.iter().zip(truth_anom).zip(weights) {
        let (dp, dt) = (p - mp, t - mt);
        spt += w * dp * dt;
        spp += w * dp * dp;
        stt += w * dt * dt;
    }
    if spp <= 0.0 || stt <= 0.0 {
        return Ok(None);
    }
    Ok(Some((spt / (spp * stt).sqrt()).clamp(-1.0, 1.0)))
}

/// Ratio of predictable components of one cell from paired anomaly
/// samples over initialization dates. Population moments throughout:
/// `rho / sqrt(var_m / (var_m + var_err))`.
pub fn rpc_cell(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::Data("rpc: series lengths differ".into()));
    }
    if pred.len() < 3 {
        return Err(Error::Data(format!("rpc: {} initialization dates, need at least 3", pred.len())));
    }
    let mut m = RpcMoments::default();
    for (&p, &t) in pred.iter().zip(truth) {
        m.push(p, t);
    }
    Ok(m.rpc())
}

/// Running sums for a streaming per-cell RPC.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RpcMoments {
    pub n: usize,
    pub sp: f64,
    pub st: f64,
    pub spp: f64,
    pub stt: f64,
    pub spt: f64,
}

impl RpcMoments {
    pub fn push(&mut self, p: f64, t: f64) {
        self.n += 1;
        self.sp += p;
        self.st += t;
        self.spp += p * p;
        self.stt += t * t;
        self.spt += p * t;
    }

    pub fn rpc(&self) -> Option<f64> {
        if self.n < 3 {
            return None;
        }
        let n = self.n as f64;
        let (mp, mt) = (self.sp / n, self.st / n);
        let var_m = self.spp / n - mp * mp;
        let var_t = self.stt / n - mt * mt;
        let cov = self.spt / n - mp * mt;
        if var_m < RPC_VAR_EPS || var_t <= 0.0 {
            return None;
        }
        let rho = cov / (var_m * var_t).sqrt();
        let var_err = (var_m + var_t - 2.0 * cov).max(0.0);
        let rho_f = (var_m / (var_m + var_err)).sqrt();
        Some(rho / rho_f)
    }
}

/// Area-weighted mean of the defined per-cell RPC values, with the count of
/// defined cells. Errors when no cell is defined.
pub fn rpc_field(per_cell: &[Option<f64>], weights: &[f64]) -> Result<(f64, usize)> {
    let (mut s, mut w, mut k) = (0.0, 0.0, 0usize);
    for (r, &wt) in per_cell.iter().zip(weights) {
        if let (Some(r), true) = (r, wt > 0.0) {
            s += r * wt;
            w += wt;
            k += 1;
        }
    }
    if k == 0 {
        return Err(Error::Numeric("rpc undefined at every cell of the mask".into()));
    }
    Ok((s / w, k))
}

/// Diebold-Mariano statistic and two-sided p-value of a loss
/// differential. The long-run variance sums autocovariances at lags
/// `0..h`, falling back to lag 0 alone when that sum is not positive.
pub fn dm_from_differential(d: &[f64], h: usize) -> Result<(f64, f64)> {
    let t = d.len();
    if h == 0 || t < 2 * h {
        return Err(Error::Data(format!("dm: {t} samples for horizon {h}, need at least {}", 2 * h.max(1))));
    }
    let tf = t as f64;
    let mean = d.iter().sum::<f64>() / tf;
    let gamma = |k: usize| (k..t).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / tf;
    let g0 = gamma(0);
    if g0 == 0.0 {
        return Ok((0.0, 1.0));
    }
    let mut v = g0 + 2.0 * (1..h).map(gamma).sum::<f64>();
    if v <= 0.0 {
        v = g0;
    }
    let stat = mean / (v / tf).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = 2.0 * normal.sf(stat.abs());
    Ok((stat, p.clamp(0.0, 1.0)))
}

/// Diebold-Mariano test on squared-error loss: `d = e_a^2 - e_b^2`.
/// Negative statistics favour `a`.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64], h: usize) -> Result<(f64, f64)> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Data("dm: error series lengths differ".into()));
    }
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a * a - b * b).collect();
    dm_from_differential(&d, h)
}

/// Percent improvement of a model over a baseline; `lower_is_better`
/// selects the RMSE convention.
pub fn improvement(model: f64, baseline: f64, lower_is_better: bool) -> Option<f64> {
    if baseline == 0.0 || !baseline.is_finite() || !model.is_finite() {
        return None;
    }
    Some(if lower_is_better {
        100.0 * (baseline - model) / baseline
    } else {
        100.0 * (model - baseline) / baseline
    })
}
