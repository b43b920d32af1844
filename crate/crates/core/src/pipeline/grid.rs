use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular latitude-longitude raster. Rows run along `lat`, columns along
/// `lon`; fields are stored row-major as `[n_lat, n_lon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

fn check_uniform(axis: &[f64], name: &str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Config(format!("grid: empty {name} axis")));
    }
    if axis.len() > 1 {
        let step = axis[1] - axis[0];
        if step == 0.0 {
            return Err(Error::Config(format!("grid: repeated {name} value")));
        }
        for w in axis.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(Error::Config(format!("grid: {name} spacing is not uniform")));
            }
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn new(lat: Vec<f64>, lon: Vec<f64>) -> Result<Self> {
        check_uniform(&lat, "lat")?;
        check_uniform(&lon, "lon")?;
        if lat.iter().any(|l| l.abs() > 90.0) {
            return Err(Error::Config("grid: latitude outside [-90, 90]".into()));
        }
        Ok(Self { lat, lon })
    }

    /// `n` evenly spaced values from `first` to `last` inclusive.
    pub fn linspace(first: f64, last: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![first];
        }
        let step = (last - first) / (n - 1) as f64;
        (0..n).map(|i| first + step * i as f64).collect()
    }

    pub fn regular(lat0: f64, lat1: f64, n_lat: usize, lon0: f64, lon1: f64, n_lon: usize) -> Result<Self> {
        Self::new(Self::linspace(lat0, lat1, n_lat), Self::linspace(lon0, lon1, n_lon))
    }

    pub fn n_lat(&self) -> usize {
        self.lat.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lon.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    fn lat_step(&self) -> f64 {
        if self.lat.len() > 1 {
            (self.lat[1] - self.lat[0]).abs()
        } else {
            1.0
        }
    }

    /// Per-row weights proportional to `cos(lat)`, scaled to mean 1 over
    /// the grid. A row on a pole gets the area of its polar cap instead of
    /// zero.
    pub fn row_weights(&self) -> Vec<f64> {
        let half = self.lat_step().to_radians() / 2.0;
        let raw: Vec<f64> = self
            .lat
            .iter()
            .map(|l| {
                let phi = l.to_radians();
                let hi = (phi + half).min(std::f64::consts::FRAC_PI_2);
                let lo = (phi - half).max(-std::f64::consts::FRAC_PI_2);
                // equals 2 sin(half) cos(phi) away from the poles
                hi.sin() - lo.sin()
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.iter().map(|w| w / mean).collect()
    }

    /// Row weights broadcast to every cell.
    pub fn area_weights(&self) -> Vec<f64> {
        let rows = self.row_weights();
        rows.iter()
            .flat_map(|&w| std::iter::repeat_n(w, self.n_lon()))
            .collect()
    }

    /// Area-weighted mean of a full field.
    pub fn global_mean(&self, field: &[f64]) -> f64 {
        let w = self.area_weights();
        let s: f64 = field.iter().zip(&w).map(|(v, w)| v * w).sum();
        s / w.iter().sum::<f64>()
    }
}
