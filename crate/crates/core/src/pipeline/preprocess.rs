//! Gap filling, running accumulations and block coarsening. Missing values
//! are NaN throughout.

use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{Error, Result};

/// Dense daily series from sparse `(day, value)` observations: each day
/// carries the latest observation on or before it; days before the first
/// observation are NaN.
pub fn gap_fill_forward(obs: &[(usize, f64)], n_days: usize) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(Error::Data("gap fill: no observations".into()));
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by_key(|o| o.0);
    let mut out = vec![f64::NAN; n_days];
    let mut next = 0;
    let mut current = f64::NAN;
    for (day, slot) in out.iter_mut().enumerate() {
        while next < sorted.len() && sorted[next].0 <= day {
            current = sorted[next].1;
            next += 1;
        }
        *slot = current;
    }
    Ok(out)
}

/// In-place forward fill of NaN gaps in a daily series.
pub fn gap_fill_series(series: &mut [f64]) {
    let mut last = f64::NAN;
    for v in series.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
}

/// Forward-fills every cell of a `[T, n_cells]` cube.
pub fn gap_fill_cube(cube: &mut [f64], n_cells: usize) {
    let t = cube.len() / n_cells;
    for c in 0..n_cells {
        let mut last = f64::NAN;
        for i in 0..t {
            let v = &mut cube[i * n_cells + c];
            if v.is_nan() {
                *v = last;
            } else {
                last = *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationMode {
    /// 30-day total, mm.
    #[default]
    Total,
    /// 30-day mean rate, mm/day.
    Mean,
}

/// Window length of the running accumulation, days.
pub const ACCUM_DAYS: usize = 30;

/// Centered 30-day running accumulation. The even window is centered as a
/// 2x30 moving average: 31 taps with half weight on the two end days. Near
/// the series ends the window is truncated and rescaled to a 30-day total.
pub fn running_accumulation_30(daily: &[f64], mode: AccumulationMode) -> Result<Vec<f64>> {
    if daily.len() < 2 {
        return Err(Error::Data("running accumulation: series shorter than 2 days".into()));
    }
    let half = (ACCUM_DAYS / 2) as isize;
    let n = daily.len() as isize;
    let out = (0..n)
        .map(|t| {
            let (mut s, mut wsum) = (0.0, 0.0);
            for k in -half..=half {
                let i = t + k;
                if !(0..n).contains(&i) {
                    continue;
                }
                let v = daily[i as usize];
                if v.is_nan() {
                    continue;
                }
                let w = if k.abs() == half { 0.5 } else { 1.0 };
                s += w * v;
                wsum += w;
            }
            if wsum == 0.0 {
                return f64::NAN;
            }
            let mean = s / wsum;
            match mode {
                AccumulationMode::Total => mean * ACCUM_DAYS as f64,
                AccumulationMode::Mean => mean,
            }
        })
        .collect();
    Ok(out)
}

/// Coarse grid whose cells tile `factor x factor` blocks of `fine`.
pub fn coarse_grid(fine: &GridSpec, factor: usize) -> Result<GridSpec> {
    if factor == 0 || fine.n_lat() % factor != 0 || fine.n_lon() % factor != 0 {
        return Err(Error::Data(format!(
            "coarsen: {}x{} grid not divisible by {factor}",
            fine.n_lat(),
            fine.n_lon()
        )));
    }
    let block_mean = |axis: &[f64]| -> Vec<f64> {
        axis.chunks(factor)
            .map(|c| c.iter().sum::<f64>() / factor as f64)
            .collect()
    };
    GridSpec::new(block_mean(&fine.lat), block_mean(&fine.lon))
}

/// Block average of one field with per-fine-row weights; NaN cells are
/// left out of both sums and an all-NaN block stays NaN.
pub fn coarsen_field(field: &[f64], n_lat: usize, n_lon: usize, row_weights: &[f64], factor: usize) -> Result<Vec<f64>> {
    if field.len() != n_lat * n_lon || row_weights.len() != n_lat {
        return Err(Error::Data("coarsen: field/weight size mismatch".into()));
    }
    if factor == 0 || n_lat % factor != 0 || n_lon % factor != 0 {
        return Err(Error::Data(format!("coarsen: {n_lat}x{n_lon} not divisible by {factor}")));
    }
    let (cl, cw) = (n_lat / factor, n_lon / factor);
    let mut out = vec![f64::NAN; cl * cw];
    for bi in 0..cl {
        for bj in 0..cw {
            let (mut s, mut wsum) = (0.0, 0.0);
            for i in bi * factor..(bi + 1) * factor {
                for j in bj * factor..(bj + 1) * factor {
                    let v = field[i * n_lon + j];
                    if !v.is_nan() {
                        s += row_weights[i] * v;
                        wsum += row_weights[i];
                    }
                }
            }
            if wsum > 0.0 {
                out[bi * cw + bj] = s / wsum;
            }
        }
    }
    Ok(out)
}

/// Block coarsening with weights from the fine grid's latitude bands.
pub fn coarsen_4x(field: &[f64], fine: &GridSpec) -> Result<Vec<f64>> {
    coarsen_field(field, fine.n_lat(), fine.n_lon(), &fine.row_weights(), 4)
}

/// Most frequent value in each block, ties to the smallest; used for
/// class-label fields.
pub fn coarsen_mode(field: &[f64], n_lat: usize, n_lon: usize, factor: usize) -> Result<Vec<f64>> {
    if field.len() != n_lat * n_lon || factor == 0 || n_lat % factor != 0 || n_lon % factor != 0 {
        return Err(Error::Data("coarsen: bad block layout".into()));
    }
    let (cl, cw) = (n_lat / factor, n_lon / factor);
    let mut out = vec![f64::NAN; cl * cw];
    for bi in 0..cl {
        for bj in 0..cw {
            let mut vals: Vec<f64> = (bi * factor..(bi + 1) * factor)
                .flat_map(|i| (bj * factor..(bj + 1) * factor).map(move |j| field[i * n_lon + j]))
                .filter(|v| !v.is_nan())
                .collect();
            vals.sort_by(f64::total_cmp);
            let mut best = (0, f64::NAN);
            let mut i = 0;
            while i < vals.len() {
                let run = vals[i..].iter().take_while(|&&v| v == vals[i]).count();
                if run > best.0 {
                    best = (run, vals[i]);
                }
                i += run;
            }
            out[bi * cw + bj] = best.1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_fill_examples() {
        let s = gap_fill_forward(&[(1, 10.0), (9, 12.0)], 12).unwrap();
        assert!(s[0].is_nan());
        assert_eq!(s[5], 10.0);
        assert_eq!(s[9], 12.0);
        assert_eq!(s[11], 12.0);
        assert!(gap_fill_forward(&[], 3).is_err());
    }

    #[test]
    fn accumulation_examples() {
        let c = running_accumulation_30(&[2.0; 90], AccumulationMode::Total).unwrap();
        assert!(c.iter().all(|v| (v - 60.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..100).map(f64::from).collect();
        let r = running_accumulation_30(&ramp, AccumulationMode::Total).unwrap();
        for t in 15..85 {
            assert!((r[t] - 30.0 * t as f64).abs() < 1e-9);
        }
        let m = running_accumulation_30(&[2.0; 10], AccumulationMode::Mean).unwrap();
        assert!(m.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(running_accumulation_30(&[1.0], AccumulationMode::Total).is_err());
    }

    #[test]
    fn coarsen_examples() {
        let w = vec![1.0; 4];
        assert_eq!(coarsen_field(&[2.0; 16], 4, 4, &w, 4).unwrap(), vec![2.0]);
        let ramp: Vec<f64> = (1..=16).map(f64::from).collect();
        assert_eq!(coarsen_field(&ramp, 4, 4, &w, 4).unwrap(), vec![8.5]);
        let mut holes = vec![f64::NAN; 16];
        holes[3] = 5.0;
        assert_eq!(coarsen_field(&holes, 4, 4, &w, 4).unwrap(), vec![5.0]);
        assert!(coarsen_field(&[f64::NAN; 16], 4, 4, &w, 4).unwrap()[0].is_nan());
    }

    #[test]
    fn mode_picks_majority() {
        let f = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(coarsen_mode(&f, 2, 2, 2).unwrap(), vec![2.0]);
    }
}
