//! GRD1 container: a directory of `<stem>.toml` headers with raw row-major
//! little-endian `<stem>.bin` payloads, date,value CSV tables for scalar
//! series, `stats.toml` and a `manifest.toml` index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::archive::{Archive, Provenance};
use super::calendar::DOY_SLOTS;
use super::catalog::VariableCatalog;
use super::climatology::ClimatologyTable;
use super::normalize::NormStats;
use super::GridSpec;
use crate::error::{Error, Result};

pub const MAGIC: &str = "GRD1";
pub const FILL_VALUE: f64 = -9999.0;
const MANIFEST: &str = "manifest.toml";
const STATS: &str = "stats.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub magic: String,
    pub variable: String,
    pub units: String,
    pub role: String,
    pub dim_names: Vec<String>,
    pub dims: Vec<usize>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_date: Option<NaiveDate>,
    pub fill_value: f64,
    pub has_missing: bool,
    pub byte_order: String,
    pub dtype: Dtype,
    pub source: String,
    pub payload: String,
    pub sha256: String,
}

impl Header {
    fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        let v = if v.is_nan() { FILL_VALUE } else { v };
        match dtype {
            Dtype::F32 => out.extend((v as f32).to_le_bytes()),
            Dtype::F64 => out.extend(v.to_le_bytes()),
        }
    }
    out
}

fn decode(bytes: &[u8], dtype: Dtype, has_missing: bool, fill: f64) -> Vec<f64> {
    bytes
        .chunks_exact(dtype.width())
        .map(|c| {
            let v = match dtype {
                Dtype::F32 => f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))),
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            };
            if has_missing && v == fill {
                f64::NAN
            } else {
                v
            }
        })
        .collect()
}

/// Metadata of one field, completed by [`write_field`].
pub struct FieldMeta<'a> {
    pub variable: &'a str,
    pub units: &'a str,
    pub role: &'a str,
    pub source: &'a str,
    pub dim_names: &'a [&'a str],
    pub dims: Vec<usize>,
    pub start_date: Option<NaiveDate>,
    pub dtype: Dtype,
}

/// Writes `<stem>.toml` and `<stem>.bin`; NaN is stored as the fill value.
pub fn write_field(dir: &Path, stem: &str, meta: FieldMeta, grid: &GridSpec, values: &[f64]) -> Result<Header> {
    let payload = encode(values, meta.dtype);
    let header = Header {
        magic: MAGIC.into(),
        variable: meta.variable.into(),
        units: meta.units.into(),
        role: meta.role.into(),
        dim_names: meta.dim_names.iter().map(|s| s.to_string()).collect(),
        dims: meta.dims,
        lat: grid.lat.clone(),
        lon: grid.lon.clone(),
        start_date: meta.start_date,
        fill_value: FILL_VALUE,
        has_missing: values.iter().any(|v| v.is_nan()),
        byte_order: "little".into(),
        dtype: meta.dtype,
        source: meta.source.into(),
        payload: format!("{stem}.bin"),
        sha256: hex::encode(Sha256::digest(&payload)),
    };
    if header.numel() != values.len() {
        return Err(Error::Data(format!("{stem}: dims {:?} for {} values", header.dims, values.len())));
    }
    let text = toml::to_string(&header).map_err(|e| Error::format(dir.join(stem), e.to_string()))?;
    write_bytes(&dir.join(format!("{stem}.toml")), text.as_bytes())?;
    write_bytes(&dir.join(&header.payload), &payload)?;
    Ok(header)
}

/// Reads and validates a field; fill values come back as NaN.
pub fn read_field(dir: &Path, stem: &str) -> Result<(Header, Vec<f64>)> {
    let hpath = dir.join(format!("{stem}.toml"));
    let header: Header = toml::from_str(&read_text(&hpath)?).map_err(|e| Error::format(&hpath, e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::format(&hpath, format!("bad magic {:?}", header.magic)));
    }
    if header.byte_order != "little" {
        return Err(Error::format(&hpath, format!("unsupported byte order {}", header.byte_order)));
    }
    if header.dims.len() != header.dim_names.len() {
        return Err(Error::format(&hpath, "dims and dim_names differ in length"));
    }
    let ppath = dir.join(&header.payload);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    if bytes.len() != header.numel() * header.dtype.width() {
        return Err(Error::format(
            &ppath,
            format!("payload has {} bytes, header implies {}", bytes.len(), header.numel() * header.dtype.width()),
        ));
    }
    if hex::encode(Sha256::digest(&bytes)) != header.sha256 {
        return Err(Error::format(&ppath, "payload checksum mismatch"));
    }
    let values = decode(&bytes, header.dtype, header.has_missing, header.fill_value);
    Ok((header, values))
}

/// Writes a two-column `date,value` table.
pub fn write_scalar_csv(path: &Path, dates: &[NaiveDate], values: &[f64]) -> Result<()> {
    let mut text = String::from("date,value\n");
    for (d, v) in dates.iter().zip(values) {
        text.push_str(&format!("{d},{v}\n"));
    }
    write_bytes(path, text.as_bytes())
}

pub fn read_scalar_csv(path: &Path) -> Result<Vec<(NaiveDate, f64)>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("date,value") {
        return Err(Error::format(path, "expected a date,value header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::format(path, format!("line {}: {l:?}", i + 2));
            let (d, v) = l.split_once(',').ok_or_else(bad)?;
            let d = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|_| bad())?;
            let v = v.trim().parse::<f64>().map_err(|_| bad())?;
            Ok((d, v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClimEntry {
    variable: String,
    pool_halfwidth: usize,
    years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    start: NaiveDate,
    n_days: usize,
    lat: Vec<f64>,
    lon: Vec<f64>,
    daily: Vec<String>,
    statics: Vec<String>,
    scalars: Vec<String>,
    cycles: Vec<String>,
    climatology: Vec<ClimEntry>,
    has_stats: bool,
    provenance: Provenance,
}

fn units_of<'a>(catalog: &'a VariableCatalog, name: &str) -> (&'a str, String, &'a str) {
    match catalog.get(name) {
        Ok(v) => (v.units.as_str(), format!("{:?}", v.role).to_lowercase(), v.source.as_str()),
        Err(_) => ("1", "auxiliary".into(), "derived"),
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Per-year row ranges of the archive.
fn year_chunks(archive: &Archive) -> Vec<(i32, usize, usize)> {
    let dates = archive.dates();
    let mut out: Vec<(i32, usize, usize)> = Vec::new();
    for (i, d) in dates.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == d.year() => last.2 = i + 1,
            _ => out.push((d.year(), i, i + 1)),
        }
    }
    out
}

impl Archive {
    /// Writes the archive as a GRD1 directory. Daily fields are split per
    /// calendar year; climatology tables are stored in double precision.
    pub fn save(&self, dir: &Path, catalog: &VariableCatalog) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.n_cells();
        let (nl, nw) = (self.grid.n_lat(), self.grid.n_lon());
        let dates = self.dates();
        for (name, cube) in &self.daily {
            let (units, role, source) = units_of(catalog, name);
            for (year, a, b) in year_chunks(self) {
                let meta = FieldMeta {
                    variable: name,
                    units,
                    role: &role,
                    source,
                    dim_names: &["time", "lat", "lon"],
                    dims: vec![b - a, nl, nw],
                    start_date: Some(dates[a]),
                    dtype: Dtype::F32,
                };
                write_field(dir, &format!("{name}_{year}"), meta, &self.grid, &to_f64(&cube[a * n..b * n]))?;
            }
        }
        for (name, field) in &self.statics {
            let (units, role, source) = units_of(catalog, name);
            let meta = FieldMeta {
                variable: name,
                units,
                role: &role,
                source,
                dim_names: &["lat", "lon"],
                dims: vec![nl, nw],
                start_date: None,
                dtype: Dtype::F32,
            };
            write_field(dir, &format!("static_{name}"), meta, &self.grid, &to_f64(field))?;
        }
        for (name, cycle) in &self.cycles {
            let (units, role, source) = units_of(catalog, name);
            let meta = FieldMeta {
                variable: name,
                units,
                role: &role,
                source,
                dim_names: &["doy", "lat", "lon"],
                dims: vec![DOY_SLOTS, nl, nw],
                start_date: None,
                dtype: Dtype::F32,
            };
            write_field(dir, &format!("cycle_{name}"), meta, &self.grid, &to_f64(cycle))?;
        }
        for (name, table) in &self.climatology {
            let (units, _, source) = units_of(catalog, name);
            for (kind, values) in [("mean", &table.mean), ("std", &table.std)] {
                let meta = FieldMeta {
                    variable: name,
                    units,
                    role: "climatology",
                    source,
                    dim_names: &["doy", "lat", "lon"],
                    dims: vec![DOY_SLOTS, nl, nw],
                    start_date: None,
                    dtype: Dtype::F64,
                };
                write_field(dir, &format!("clim_{name}_{kind}"), meta, &self.grid, values)?;
            }
        }
        for (name, series) in &self.scalars {
            write_scalar_csv(&dir.join(format!("{name}.csv")), &dates, series)?;
        }
        if let Some(stats) = &self.stats {
            let text = toml::to_string(stats).map_err(|e| Error::format(dir.join(STATS), e.to_string()))?;
            write_bytes(&dir.join(STATS), text.as_bytes())?;
        }
        let manifest = Manifest {
            format: MAGIC.into(),
            start: self.start,
            n_days: self.n_days,
            lat: self.grid.lat.clone(),
            lon: self.grid.lon.clone(),
            daily: self.daily.keys().cloned().collect(),
            statics: self.statics.keys().cloned().collect(),
            scalars: self.scalars.keys().cloned().collect(),
            cycles: self.cycles.keys().cloned().collect(),
            climatology: self
                .climatology
                .values()
                .map(|t| ClimEntry {
                    variable: t.variable.clone(),
                    pool_halfwidth: t.pool_halfwidth,
                    years: t.years.clone(),
                })
                .collect(),
            has_stats: self.stats.is_some(),
            provenance: self.provenance.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
        write_bytes(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Reads a GRD1 directory written by [`Archive::save`].
    pub fn load(dir: &Path) -> Result<Archive> {
        let mpath = dir.join(MANIFEST);
        let m: Manifest = toml::from_str(&read_text(&mpath)?).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if m.format != MAGIC {
            return Err(Error::format(&mpath, format!("unknown format {:?}", m.format)));
        }
        let grid = GridSpec::new(m.lat.clone(), m.lon.clone()).map_err(|e| Error::format(&mpath, e.to_string()))?;
        let mut archive = Archive::new(grid, m.start, m.n_days);
        archive.provenance = m.provenance.clone();
        let n = archive.n_cells();
        let check_grid = |h: &Header, path: PathBuf| -> Result<()> {
            if h.lat != m.lat || h.lon != m.lon {
                return Err(Error::format(path, "grid differs from manifest"));
            }
            Ok(())
        };
        for name in &m.daily {
            let mut cube = Vec::with_capacity(m.n_days * n);
            for (year, a, b) in year_chunks(&archive) {
                let stem = format!("{name}_{year}");
                let (h, v) = read_field(dir, &stem)?;
                check_grid(&h, dir.join(&stem))?;
                if h.dims != [b - a, archive.grid.n_lat(), archive.grid.n_lon()] {
                    return Err(Error::format(dir.join(&stem), format!("unexpected dims {:?}", h.dims)));
                }
                cube.extend(to_f32(&v));
            }
            archive.insert_daily(name, cube)?;
        }
        for name in &m.statics {
            let (h, v) = read_field(dir, &format!("static_{name}"))?;
            check_grid(&h, dir.join(name))?;
            archive.insert_static(name, to_f32(&v))?;
        }
        for name in &m.cycles {
            let (h, v) = read_field(dir, &format!("cycle_{name}"))?;
            check_grid(&h, dir.join(name))?;
            archive.insert_cycle(name, to_f32(&v))?;
        }
        for entry in &m.climatology {
            let (_, mean) = read_field(dir, &format!("clim_{}_mean", entry.variable))?;
            let (_, std) = read_field(dir, &format!("clim_{}_std", entry.variable))?;
            if mean.len() != DOY_SLOTS * n || std.len() != DOY_SLOTS * n {
                return Err(Error::format(dir.join(&entry.variable), "climatology size mismatch"));
            }
            archive.climatology.insert(
                entry.variable.clone(),
                ClimatologyTable {
                    variable: entry.variable.clone(),
                    n_cells: n,
                    pool_halfwidth: entry.pool_halfwidth,
                    years: entry.years.clone(),
                    mean,
                    std,
                },
            );
        }
        let dates = archive.dates();
        for name in &m.scalars {
            let path = dir.join(format!("{name}.csv"));
            let rows = read_scalar_csv(&path)?;
            let by_date: BTreeMap<NaiveDate, f64> = rows.into_iter().collect();
            let series = dates
                .iter()
                .map(|d| by_date.get(d).copied().ok_or_else(|| Error::format(&path, format!("no value for {d}"))))
                .collect::<Result<Vec<_>>>()?;
            archive.insert_scalar(name, series)?;
        }
        if m.has_stats {
            let spath = dir.join(STATS);
            let stats: NormStats = toml::from_str(&read_text(&spath)?).map_err(|e| Error::format(&spath, e.to_string()))?;
            archive.stats = Some(stats);
        }
        Ok(archive)
    }
}
