//! Seeded synthetic archives with the standard variable roster: smooth
//! spatial patterns modulated by a seasonal cycle, AR(1) noise, optional
//! flash-drought events, and moisture and dry-air budgets that close by
//! construction.

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::archive::{Archive, Provenance, Stage};
use super::calendar::{doy_slot, LEAP_SLOT};
use super::catalog::VariableCatalog;
use super::GridSpec;
use crate::error::{Error, Result};
use crate::physics::{DP_200, DP_500, GRAVITY};

/// A soil-moisture drawdown over a lat/lon box with matching declines in
/// evapotranspiration, precipitation and vegetation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroughtEvent {
    pub start: NaiveDate,
    pub onset_days: usize,
    pub hold_days: usize,
    pub recovery_days: usize,
    pub lat_range: [f64; 2],
    pub lon_range: [f64; 2],
    /// Fraction of soil moisture removed at full strength.
    pub depth: f64,
}

impl DroughtEvent {
    /// Event strength in [0, 1] on day offset `t` from the event start.
    pub fn strength(&self, date: NaiveDate) -> f64 {
        let t = (date - self.start).num_days();
        if t < 0 {
            return 0.0;
        }
        let t = t as f64;
        let (on, hold, rec) = (self.onset_days as f64, self.hold_days as f64, self.recovery_days as f64);
        if t < on {
            (t + 1.0) / on.max(1.0)
        } else if t < on + hold {
            1.0
        } else if t < on + hold + rec {
            1.0 - (t - on - hold + 1.0) / rec.max(1.0)
        } else {
            0.0
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let within = |v: f64, r: [f64; 2]| v >= r[0].min(r[1]) && v <= r[0].max(r[1]);
        within(lat, self.lat_range) && within(lon, self.lon_range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Model-grid size; raw fields are produced `fine_factor` times finer.
    pub n_lat: usize,
    pub n_lon: usize,
    /// First and last row latitude, first and last column longitude.
    pub lat_range: [f64; 2],
    pub lon_range: [f64; 2],
    pub years: Vec<i32>,
    /// Multiplier on every stochastic term; 0 gives a pure seasonal cycle.
    pub noise_scale: f64,
    pub ar_coef: f64,
    /// Year-to-year soil-moisture anomaly, as a fraction of layer capacity.
    pub sm_interannual: f64,
    /// Years generated without a soil-moisture anomaly.
    pub neutral_years: Vec<i32>,
    pub events: Vec<DroughtEvent>,
    /// Report vegetation only every `veg_cadence` days of the year.
    pub sparse_vegetation: bool,
    pub veg_cadence: usize,
    pub fine_factor: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            lat_range: [38.0, -35.0],
            lon_range: [-18.0, 52.0],
            years: vec![2001, 2002, 2003],
            noise_scale: 1.0,
            ar_coef: 0.8,
            sm_interannual: 0.03,
            neutral_years: Vec::new(),
            events: Vec::new(),
            sparse_vegetation: false,
            veg_cadence: 8,
            fine_factor: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lat < 2 || self.n_lon < 2 {
            return Err(Error::Config("synth: grid must be at least 2x2".into()));
        }
        if self.years.is_empty() {
            return Err(Error::Config("synth: no years".into()));
        }
        if !(0.0..1.0).contains(&self.ar_coef) {
            return Err(Error::Config("synth: ar_coef must lie in [0, 1)".into()));
        }
        if self.noise_scale < 0.0 || self.sm_interannual < 0.0 {
            return Err(Error::Config("synth: negative noise amplitude".into()));
        }
        if self.fine_factor == 0 || self.veg_cadence == 0 {
            return Err(Error::Config("synth: fine_factor and veg_cadence must be positive".into()));
        }
        for e in &self.events {
            if !(0.0..1.0).contains(&e.depth) {
                return Err(Error::Config("synth: event depth must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    /// The grid the model sees.
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::regular(
            self.lat_range[0],
            self.lat_range[1],
            self.n_lat,
            self.lon_range[0],
            self.lon_range[1],
            self.n_lon,
        )
    }

    /// Grid of the raw fields; block means of its coordinates give
    /// [`SynthConfig::grid`].
    pub fn raw_grid(&self) -> Result<GridSpec> {
        let f = self.fine_factor;
        let coarse = self.grid()?;
        if f == 1 {
            return Ok(coarse);
        }
        let refine = |axis: &[f64]| -> Vec<f64> {
            let step = axis[1] - axis[0];
            let fine = step / f as f64;
            let first = axis[0] - step / 2.0 + fine / 2.0;
            (0..axis.len() * f).map(|i| first + fine * i as f64).collect()
        };
        GridSpec::new(refine(&coarse.lat), refine(&coarse.lon))
    }

    /// Cells of `grid` inside any configured event box.
    pub fn event_cells(&self, grid: &GridSpec) -> Vec<bool> {
        grid.lat
            .iter()
            .flat_map(|&la| grid.lon.iter().map(move |&lo| (la, lo)))
            .map(|(la, lo)| self.events.iter().any(|e| e.contains(la, lo)))
            .collect()
    }
}

/// `sin(a lat + b) cos(c lon + d)` with random coefficients.
struct Pattern {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Pattern {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            a: rng.random_range(1.0..3.0),
            b: rng.random_range(0.0..tau),
            c: rng.random_range(1.0..3.0),
            d: rng.random_range(0.0..tau),
        }
    }

    fn field(&self, grid: &GridSpec) -> Vec<f64> {
        grid.lat
            .iter()
            .flat_map(|&la| {
                grid.lon
                    .iter()
                    .map(move |&lo| (self.a * la.to_radians() + self.b).sin() * (self.c * lo.to_radians() + self.d).cos())
            })
            .collect()
    }
}

/// Unit-variance AR(1) noise per cell.
struct Ar1 {
    phi: f64,
    state: Vec<f64>,
}

impl Ar1 {
    fn new(n: usize, phi: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            phi,
            state: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> &[f64] {
        let innov = (1.0 - self.phi * self.phi).sqrt();
        for s in &mut self.state {
            let e: f64 = rng.sample(StandardNormal);
            *s = self.phi * *s + innov * e;
        }
        &self.state
    }
}

/// Seasonal phase angle; 29 February sits halfway between its neighbours.
fn season_angle(date: NaiveDate) -> f64 {
    let slot = doy_slot(date);
    let pos = if slot == LEAP_SLOT { 58.5 } else { slot as f64 };
    std::f64::consts::TAU * pos / 365.0
}

const SM_LAYERS: [(&str, f64); 4] = [("sm1", 25.0), ("sm2", 75.0), ("sm3", 150.0), ("sm4", 250.0)];
const VEG: [(&str, f64, f64); 4] = [("ndvi", 1.0, 0.0), ("evi", 0.6, 0.0), ("lai", 6.0, 0.0), ("fpar", 0.9, 0.02)];
/// Global-mean column water, kg m-2.
const COLUMN_WATER: f64 = 20.0;
/// Global-mean dry-air surface pressure, Pa.
const DRY_PRESSURE: f64 = 98_000.0;
/// Share of column water held at the 500 mb level.
const SHARE_500: f64 = 0.85;

fn weighted_mean(f: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()
}

/// Generates a raw-stage archive: every daily variable except the 30-day
/// accumulation, statics, climate indices; no climatologies.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Archive> {
    cfg.validate()?;
    let grid = cfg.raw_grid()?;
    let n = grid.n_cells();
    let mut archive = Archive::for_years(grid.clone(), &cfg.years)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = cfg.noise_scale;

    let lat: Vec<f64> = grid.lat.iter().flat_map(|&la| grid.lon.iter().map(move |_| la)).collect();
    let lon: Vec<f64> = grid.lat.iter().flat_map(|_| grid.lon.iter().copied()).collect();
    let lat_max = grid.lat.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    let hem: Vec<f64> = lat.iter().map(|l| l / lat_max).collect();
    let polar: Vec<f64> = lat.iter().map(|l| (l / lat_max).powi(2)).collect();
    let area = grid.area_weights();

    let lsm: Vec<f64> = lat
        .iter()
        .zip(&lon)
        .map(|(la, lo)| {
            let r = ((la - 5.0) / 32.0).powi(2) + ((lo - 20.0) / 25.0).powi(2);
            if r <= 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut pat = || Pattern::new(&mut rng).field(&grid);
    let p_t = pat();
    let p_wind = pat();
    let p_z = pat();
    let p_q = pat();
    let p_ps = pat();
    let p_pet = pat();
    let p_ratio = pat();
    let p_rain = pat();
    let p_nsw = pat();
    let p_ws = pat();
    let p_veg = pat();
    let p_sm = pat();
    let p_hv = pat();
    let p_lv = pat();

    let class = |p: f64, land: f64| if land > 0.5 { (1.0 + 2.0 * (p + 1.0)).floor().min(5.0) } else { 0.0 };
    archive.insert_static("lsm", to_f32(&lsm))?;
    archive.insert_static("hv_type", to_f32(&p_hv.iter().zip(&lsm).map(|(&p, &l)| class(p, l)).collect::<Vec<_>>()))?;
    archive.insert_static("lv_type", to_f32(&p_lv.iter().zip(&lsm).map(|(&p, &l)| class(p, l)).collect::<Vec<_>>()))?;
    archive.insert_static("hv_cover", to_f32(&p_hv.iter().zip(&lsm).map(|(p, l)| l * (0.5 + 0.4 * p)).collect::<Vec<_>>()))?;
    archive.insert_static("lv_cover", to_f32(&p_lv.iter().zip(&lsm).map(|(p, l)| l * (0.4 + 0.3 * p)).collect::<Vec<_>>()))?;

    // Year-to-year soil-moisture anomalies, shared by all layers. The
    // non-neutral years take stratified normal quantiles in a per-cell
    // random order, so a neutral year sits at the median of the others.
    let active: Vec<usize> = (0..cfg.years.len())
        .filter(|&i| !cfg.neutral_years.contains(&cfg.years[i]))
        .collect();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let quantiles: Vec<f64> = (0..active.len())
        .map(|k| std_normal.inverse_cdf((k as f64 + 0.5) / active.len() as f64))
        .collect();
    let mut sm_offsets = vec![vec![0.0; n]; cfg.years.len()];
    for c in 0..n {
        let mut order = quantiles.clone();
        order.shuffle(&mut rng);
        for (&i, z) in active.iter().zip(order) {
            sm_offsets[i][c] = cfg.sm_interannual * z;
        }
    }

    let names = [
        "u500", "u200", "v500", "v200", "z500", "z200", "q", "ps", "t2m", "dep", "pet", "ratio", "rain", "nsw", "ws",
        "gust", "veg", "sm",
    ];
    let mut noise: Vec<Ar1> = names.iter().map(|_| Ar1::new(n, cfg.ar_coef, &mut rng)).collect();
    let mut enso_state: f64 = rng.sample(StandardNormal);
    let mut iod_state: f64 = rng.sample(StandardNormal);

    let dates = archive.dates();
    let t_days = dates.len();
    let mut out: std::collections::BTreeMap<&str, Vec<f32>> = std::collections::BTreeMap::new();
    let daily_names = [
        "u500", "u200", "v500", "v200", "z500", "z200", "qtot500", "qtot200", "t2m", "d2m", "precip_1d", "sp", "evap",
        "pevap", "nsw", "wind_speed", "wind_gust", "ndvi", "evi", "lai", "fpar", "sm1", "sm2", "sm3", "sm4",
    ];
    for name in daily_names {
        out.insert(name, Vec::with_capacity(t_days * n));
    }
    let mut enso = Vec::with_capacity(t_days);
    let mut iod = Vec::with_capacity(t_days);
    let event_mask: Vec<Vec<bool>> = cfg
        .events
        .iter()
        .map(|e| lat.iter().zip(&lon).map(|(&la, &lo)| e.contains(la, lo)).collect())
        .collect();

    for &date in &dates {
        let th = season_angle(date);
        let year_idx = cfg.years.iter().position(|&y| y == date.year()).unwrap_or(0);
        let mut e: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for ar in noise.iter_mut() {
            e.push(ar.step(&mut rng).iter().map(|v| ns * v).collect());
        }
        let en: f64 = rng.sample(StandardNormal);
        let io: f64 = rng.sample(StandardNormal);
        enso_state = 0.995 * enso_state + (1.0f64 - 0.995 * 0.995).sqrt() * en;
        iod_state = 0.99 * iod_state + (1.0f64 - 0.99 * 0.99).sqrt() * io;
        enso.push(ns * enso_state);
        iod.push(0.5 * ns * iod_state);

        let strength: Vec<f64> = (0..n)
            .map(|c| {
                cfg.events
                    .iter()
                    .zip(&event_mask)
                    .filter(|(_, m)| m[c])
                    .map(|(ev, _)| ev.strength(date) * ev.depth)
                    .fold(0.0, f64::max)
            })
            .collect();

        let s = |phase: f64| (th + phase).sin();
        let cell = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..n).map(f).collect() };
        let ix = |k: &str| names.iter().position(|x| *x == k).expect("noise name");
        let ev = |k: &str, c: usize| e[ix(k)][c];

        let u500 = cell(&|c| 8.0 * (3.0 * lat[c].to_radians()).cos() + 3.0 * p_wind[c] + 2.0 * hem[c] * s(0.3) + 2.0 * ev("u500", c));
        let u200 = cell(&|c| 2.0 * u500[c] + 5.0 * polar[c] + 3.0 * ev("u200", c));
        let v500 = cell(&|c| 2.0 * p_wind[c] * s(1.0) + 1.5 * ev("v500", c));
        let v200 = cell(&|c| 1.5 * v500[c] + 2.0 * ev("v200", c));
        let z500 = cell(&|c| GRAVITY * (5800.0 - 150.0 * polar[c] + 30.0 * p_z[c] + 40.0 * hem[c] * s(0.0) + 15.0 * ev("z500", c)));
        let z200 = cell(&|c| GRAVITY * 6400.0 + 1.9 * z500[c] + GRAVITY * 20.0 * ev("z200", c));

        let mw_raw = cell(&|c| 6.0 * p_q[c] + 4.0 * hem[c] * s(0.5) + 1.5 * ev("q", c));
        let mw_mean = weighted_mean(&mw_raw, &area);
        let mw: Vec<f64> = mw_raw.iter().map(|v| v - mw_mean + COLUMN_WATER).collect();
        let q500 = cell(&|c| SHARE_500 * mw[c] * GRAVITY / DP_500);
        let q200 = cell(&|c| (1.0 - SHARE_500) * mw[c] * GRAVITY / DP_200);
        let pd_raw = cell(&|c| -2500.0 * p_ps[c] + 200.0 * hem[c] * s(1.2) + 150.0 * ev("ps", c));
        let pd_mean = weighted_mean(&pd_raw, &area);
        let sp = cell(&|c| pd_raw[c] - pd_mean + DRY_PRESSURE + GRAVITY * mw[c]);

        let t2m = cell(&|c| 300.0 - 20.0 * polar[c] + 3.0 * p_t[c] + 6.0 * hem[c] * s(-0.4) + 1.5 * ev("t2m", c) + 3.0 * strength[c]);
        let d2m = cell(&|c| t2m[c] - (7.0 + 3.0 * p_t[c] + 1.5 * s(2.0) + 0.8 * ev("dep", c) + 8.0 * strength[c]).max(0.5));
        let pet = cell(&|c| (4.0 + 1.5 * p_pet[c] + 1.5 * hem[c] * s(-0.4) + 0.5 * ev("pet", c) + 2.0 * strength[c]).max(0.5));
        let ratio = cell(&|c| {
            let r = 0.45 + 0.2 * p_ratio[c] + 0.15 * hem[c] * s(0.8) + 0.1 * ev("ratio", c);
            r.clamp(0.05, 0.95) * (1.0 - strength[c])
        });
        let evap = cell(&|c| ratio[c] * pet[c]);
        let rain = cell(&|c| (2.5 + 1.5 * p_rain[c] + 2.0 * hem[c] * s(0.8) + 1.2 * ev("rain", c)).max(0.0) * (1.0 - strength[c]));
        // global precipitation balances global evaporation: column water
        // has a constant global mean
        let (e_mean, r_mean) = (weighted_mean(&evap, &area), weighted_mean(&rain, &area));
        let scale = if r_mean > 0.0 { e_mean / r_mean } else { 0.0 };
        let precip = cell(&|c| scale * rain[c]);
        let nsw = cell(&|c| (180.0 + 20.0 * p_nsw[c] + 40.0 * hem[c] * s(-0.2) + 15.0 * ev("nsw", c) + 20.0 * strength[c]).max(0.0));
        let ws = cell(&|c| (4.0 + 1.5 * p_ws[c] + 0.5 * s(1.5) + 1.0 * ev("ws", c)).max(0.2));
        let gust = cell(&|c| 1.6 * ws[c] + 1.0 + 0.5 * ev("gust", c).abs());

        let cadence_day = date.ordinal0() as usize % cfg.veg_cadence == 0;
        let veg_base = cell(&|c| {
            let v = 0.2 + 0.25 * lsm[c] + 0.1 * p_veg[c] + 0.1 * hem[c] * s(1.0) + 0.03 * ev("veg", c);
            v.clamp(0.01, 0.95) * (1.0 - 0.4 * strength[c])
        });
        let sm_frac = cell(&|c| {
            let f = 0.35 + 0.1 * p_sm[c] + 0.05 * hem[c] * s(0.6) + sm_offsets[year_idx][c] + 0.005 * ev("sm", c);
            f.max(0.01) * (1.0 - strength[c])
        });

        let mut put = |name: &str, v: &[f64]| out.get_mut(name).expect("daily name").extend(v.iter().map(|&x| x as f32));
        put("u500", &u500);
        put("u200", &u200);
        put("v500", &v500);
        put("v200", &v200);
        put("z500", &z500);
        put("z200", &z200);
        put("qtot500", &q500);
        put("qtot200", &q200);
        put("t2m", &t2m);
        put("d2m", &d2m);
        put("precip_1d", &precip);
        put("sp", &sp);
        put("evap", &evap);
        put("pevap", &pet);
        put("nsw", &nsw);
        put("wind_speed", &ws);
        put("wind_gust", &gust);
        for (name, mult, add) in VEG {
            let v: Vec<f64> = if cfg.sparse_vegetation && !cadence_day {
                vec![f64::NAN; n]
            } else {
                veg_base.iter().map(|b| mult * b + add).collect()
            };
            put(name, &v);
        }
        for (name, cap) in SM_LAYERS {
            put(name, &sm_frac.iter().map(|f| cap * f).collect::<Vec<_>>());
        }
    }

    for (name, cube) in out {
        archive.insert_daily(name, cube)?;
    }
    archive.insert_scalar("enso", enso)?;
    archive.insert_scalar("iod", iod)?;
    archive.provenance = Provenance {
        stage: Stage::Raw,
        source: "synthetic".into(),
        seed: Some(seed),
        train_years: Vec::new(),
        catalog_hash: VariableCatalog::standard().hash(),
        config_hash: String::new(),
        code_version: crate::CODE_VERSION.into(),
    };
    Ok(archive)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
