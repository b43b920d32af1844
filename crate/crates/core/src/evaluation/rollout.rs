//! Rollout evaluation over initialization dates: per-lead skill of every
//! forecast source against the archive truth, seasonal strata, significance
//! against the primary source and spatially averaged anomaly samples.

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forecaster::{climatology_table, Forecaster};
use super::mask::RegionMask;
use super::metrics::{acc, dm_test, improvement, rmse, rpc_field, RpcMoments};
use crate::error::{Error, Result};
use crate::pipeline::calendar::{is_mamjja, DOY_SLOTS, LEAP_SLOT};
use crate::pipeline::{Archive, VariableCatalog};
use crate::tensor::Tensor;
use crate::training::init_dates;

/// Reference subtracted from forecasts and truth before ACC and RPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyReference {
    /// Per-cell mean of the day-of-year climatology over the year. The
    /// climatology forecast keeps its seasonal cycle as a signal, so its ACC
    /// is defined.
    #[default]
    AnnualMean,
    /// Day-of-year climatological mean of the valid date.
    DayOfYear,
}

impl AnomalyReference {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AnnualMean => "annual_mean",
            Self::DayOfYear => "day_of_year",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    All,
    Mamjja,
    Sondjf,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::All, Stratum::Mamjja, Stratum::Sondjf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Mamjja => "mamjja",
            Self::Sondjf => "sondjf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown stratum {s:?}")))
    }

    pub fn contains(self, init: NaiveDate) -> bool {
        match self {
            Self::All => true,
            Self::Mamjja => is_mamjja(init),
            Self::Sondjf => !is_mamjja(init),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Years whose days are initialization dates.
    pub years: Vec<i32>,
    /// Reported leads in days; rollouts run to the largest.
    pub leads: Vec<usize>,
    /// Output variables to score; empty means all.
    pub variables: Vec<String>,
    pub init_stride: usize,
    pub max_inits: Option<usize>,
    pub anomaly_reference: AnomalyReference,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            years: Vec::new(),
            leads: (0..=90).collect(),
            variables: Vec::new(),
            init_stride: 1,
            max_inits: None,
            anomaly_reference: AnomalyReference::AnnualMean,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leads.is_empty() {
            return Err(Error::Config("eval: no leads".into()));
        }
        if self.init_stride == 0 {
            return Err(Error::Config("eval: init_stride must be at least 1".into()));
        }
        if self.max_inits == Some(0) {
            return Err(Error::Config("eval: max_inits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_lead(&self) -> usize {
        self.leads.iter().copied().max().unwrap_or(0)
    }

    /// Initialization dates whose rollout stays inside the years.
    pub fn init_dates(&self, archive: &Archive) -> Vec<NaiveDate> {
        let mut d = init_dates(archive, &self.years, self.max_lead(), self.init_stride);
        if let Some(m) = self.max_inits {
            d.truncate(m);
        }
        d
    }
}

/// One row of the skill report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRow {
    pub variable: String,
    pub mask: String,
    pub stratum: Stratum,
    pub lead: usize,
    pub source: String,
    pub n: usize,
    pub rmse: f64,
    pub rmse_std: f64,
    pub acc: Option<f64>,
    pub acc_std: Option<f64>,
    pub rpc: Option<f64>,
    /// Primary source against this one; negative favours the primary.
    pub dm_stat: Option<f64>,
    pub dm_p: Option<f64>,
    /// Percent improvement over the climatology source.
    pub rmse_improvement: Option<f64>,
    pub acc_improvement: Option<f64>,
}

/// An initialization date dropped from the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub init: NaiveDate,
    pub source: String,
    pub message: String,
}

/// Mask-averaged day-of-year anomaly per initialization date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDistribution {
    pub variable: String,
    pub mask: String,
    pub lead: usize,
    /// A forecast source or `truth`.
    pub source: String,
    pub values: Vec<f64>,
}

impl AnomalyDistribution {
    /// `(min, mean, max)`.
    pub fn summary(&self) -> Option<(f64, f64, f64)> {
        if self.values.is_empty() {
            return None;
        }
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        Some((min, mean, max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillReport {
    pub rows: Vec<SkillRow>,
    pub inits: Vec<NaiveDate>,
    pub incidents: Vec<Incident>,
    pub distributions: Vec<AnomalyDistribution>,
    pub anomaly_reference: AnomalyReference,
    /// Spatial weighting of RMSE, ACC and RPC.
    pub weighting: String,
}

impl SkillReport {
    pub fn row(&self, variable: &str, mask: &str, stratum: Stratum, lead: usize, source: &str) -> Option<&SkillRow> {
        self.rows.iter().find(|r| {
            r.variable == variable && r.mask == mask && r.stratum == stratum && r.lead == lead && r.source == source
        })
    }

    pub fn distribution(&self, variable: &str, mask: &str, lead: usize, source: &str) -> Option<&AnomalyDistribution> {
        self.distributions
            .iter()
            .find(|d| d.variable == variable && d.mask == mask && d.lead == lead && d.source == source)
    }
}

/// Diebold-Mariano horizon for errors `lead` days ahead sampled every
/// `stride` days.
pub fn dm_horizon(lead: usize, stride: usize, samples: usize) -> usize {
    lead.div_ceil(stride.max(1)).min(samples / 2).max(1)
}

struct Layout {
    vars: Vec<(String, usize)>,
    n_masks: usize,
    n_leads: usize,
    n_src: usize,
}

impl Layout {
    fn score(&self, v: usize, m: usize, l: usize, s: usize) -> usize {
        ((v * self.n_masks + m) * self.n_leads + l) * self.n_src + s
    }

    fn anom(&self, v: usize, l: usize, s: usize) -> usize {
        (v * self.n_leads + l) * (self.n_src + 1) + s
    }

    fn dist(&self, v: usize, m: usize, l: usize, s: usize) -> usize {
        ((v * self.n_masks + m) * self.n_leads + l) * (self.n_src + 1) + s
    }
}

struct InitOutcome {
    /// `(rmse, acc)` by `Layout::score`.
    scores: Vec<(f64, Option<f64>)>,
    /// Reference anomalies by `Layout::anom`; source index `n_src` is truth.
    anoms: Vec<Vec<f64>>,
    /// Mask-mean day-of-year anomalies by `Layout::dist`.
    dist: Vec<f64>,
}

fn channel(t: &Tensor, c: usize, n: usize) -> &[f64] {
    &t.data()[c * n..(c + 1) * n]
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Scores every source from every initialization date of `cfg`. The first
/// source is the primary one that significance tests compare against the
/// rest; percent improvements are relative to a source named
/// `climatology` when present.
pub fn rollout_evaluate(
    archive: &Archive,
    catalog: &VariableCatalog,
    sources: &[&dyn Forecaster],
    masks: &[RegionMask],
    cfg: &EvalConfig,
) -> Result<SkillReport> {
    cfg.validate()?;
    if sources.is_empty() || masks.is_empty() {
        return Err(Error::Config("eval: need at least one source and one mask".into()));
    }
    let n = archive.n_cells();
    if masks.iter().any(|m| m.weights.len() != n) {
        return Err(Error::Data("eval: mask does not match the archive grid".into()));
    }
    let outputs = catalog.outputs();
    let vars: Vec<(String, usize)> = if cfg.variables.is_empty() {
        outputs.iter().enumerate().map(|(i, v)| (v.name.clone(), i)).collect()
    } else {
        cfg.variables
            .iter()
            .map(|name| Ok((name.clone(), catalog.output_index(name)?)))
            .collect::<Result<_>>()?
    };
    let mut leads = cfg.leads.clone();
    leads.sort_unstable();
    leads.dedup();
    let max_lead = *leads.last().expect("validated");
    let inits = cfg.init_dates(archive);
    if inits.is_empty() {
        return Err(Error::Data(format!("eval: no initialization dates in {:?} with {max_lead}-day rollouts", cfg.years)));
    }

    let tables = vars
        .iter()
        .map(|(name, _)| climatology_table(archive, name))
        .collect::<Result<Vec<_>>>()?;
    let annual: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            (0..n)
                .map(|c| (0..DOY_SLOTS).filter(|&s| s != LEAP_SLOT).map(|s| t.mean_at(s)[c]).sum::<f64>() / 365.0)
                .collect()
        })
        .collect();
    let lay = Layout {
        vars,
        n_masks: masks.len(),
        n_leads: leads.len(),
        n_src: sources.len(),
    };

    let evaluate_init = |init: NaiveDate| -> Result<std::result::Result<InitOutcome, Incident>> {
        let truth: Vec<Tensor> = leads
            .iter()
            .map(|&l| archive.assemble_output(catalog, init + Days::new(l as u64)))
            .collect::<Result<_>>()?;
        let mut forecasts = Vec::with_capacity(sources.len());
        for src in sources {
            match src.forecast(archive, init, max_lead) {
                Ok(f) if f.len() == max_lead + 1 => forecasts.push(f),
                Ok(f) => {
                    return Err(Error::Shape(format!(
                        "{} returned {} stacks for {} leads",
                        src.name(),
                        f.len(),
                        max_lead + 1
                    )))
                }
                Err(Error::Numeric(message)) => {
                    return Ok(Err(Incident {
                        init,
                        source: src.name().into(),
                        message,
                    }))
                }
                Err(e) => return Err(e),
            }
        }
        let mut out = InitOutcome {
            scores: vec![(0.0, None); lay.vars.len() * lay.n_masks * lay.n_leads * lay.n_src],
            anoms: vec![Vec::new(); lay.vars.len() * lay.n_leads * (lay.n_src + 1)],
            dist: vec![0.0; lay.vars.len() * lay.n_masks * lay.n_leads * (lay.n_src + 1)],
        };
        for (v, (_, ch)) in lay.vars.iter().enumerate() {
            for (li, &lead) in leads.iter().enumerate() {
                let date = init + Days::new(lead as u64);
                let doy = tables[v].mean_on(date);
                let reference = match cfg.anomaly_reference {
                    AnomalyReference::AnnualMean => annual[v].as_slice(),
                    AnomalyReference::DayOfYear => doy,
                };
                let t = channel(&truth[li], *ch, n);
                let t_anom = sub(t, reference);
                let t_doy = sub(t, doy);
                for (s, f) in forecasts.iter().enumerate() {
                    let p = channel(&f[lead], *ch, n);
                    if p.iter().any(|x| !x.is_finite()) {
                        return Ok(Err(Incident {
                            init,
                            source: sources[s].name().into(),
                            message: format!("non-finite {} at lead {lead}", lay.vars[v].0),
                        }));
                    }
                    let p_anom = sub(p, reference);
                    let p_doy = sub(p, doy);
                    for (m, mask) in masks.iter().enumerate() {
                        out.scores[lay.score(v, m, li, s)] =
                            (rmse(p, t, &mask.weights)?, acc(&p_anom, &t_anom, &mask.weights)?);
                        out.dist[lay.dist(v, m, li, s)] = mask.mean(&p_doy);
                    }
                    out.anoms[lay.anom(v, li, s)] = p_anom;
                }
                for (m, mask) in masks.iter().enumerate() {
                    out.dist[lay.dist(v, m, li, lay.n_src)] = mask.mean(&t_doy);
                }
                out.anoms[lay.anom(v, li, lay.n_src)] = t_anom;
            }
        }
        Ok(Ok(out))
    };

    // Per-init work runs in parallel; accumulation is sequential in date
    // order so the report does not depend on the thread count.
    let mut kept: Vec<NaiveDate> = Vec::new();
    let mut incidents = Vec::new();
    let mut scores: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); lay.vars.len() * lay.n_masks * lay.n_leads * lay.n_src];
    let mut dist: Vec<Vec<f64>> = vec![Vec::new(); lay.vars.len() * lay.n_masks * lay.n_leads * (lay.n_src + 1)];
    // Moments per half-year; the whole-year moments are their sum.
    let n_anom = lay.vars.len() * lay.n_leads * lay.n_src;
    let mut moments = [vec![vec![RpcMoments::default(); n]; n_anom], vec![vec![RpcMoments::default(); n]; n_anom]];
    let chunk = 2 * rayon::current_num_threads().max(1);
    for batch in inits.chunks(chunk) {
        let results: Vec<_> = batch.par_iter().map(|&d| evaluate_init(d)).collect();
        for (&init, res) in batch.iter().zip(results) {
            let o = match res? {
                Ok(o) => o,
                Err(incident) => {
                    incidents.push(incident);
                    continue;
                }
            };
            kept.push(init);
            for (acc, x) in scores.iter_mut().zip(o.scores) {
                acc.push(x);
            }
            for (acc, x) in dist.iter_mut().zip(o.dist) {
                acc.push(x);
            }
            let half = usize::from(!is_mamjja(init));
            for v in 0..lay.vars.len() {
                for l in 0..lay.n_leads {
                    let t = &o.anoms[lay.anom(v, l, lay.n_src)];
                    for s in 0..lay.n_src {
                        let p = &o.anoms[lay.anom(v, l, s)];
                        let cells = &mut moments[half][(v * lay.n_leads + l) * lay.n_src + s];
                        for c in 0..n {
                            cells[c].push(p[c], t[c]);
                        }
                    }
                }
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Numeric(format!(
            "eval: every initialization date produced an incident ({} incidents)",
            incidents.len()
        )));
    }

    let clim_src = sources.iter().position(|s| s.name() == "climatology");
    let mut rows = Vec::new();
    for (v, (name, _)) in lay.vars.iter().enumerate() {
        for (m, mask) in masks.iter().enumerate() {
            for stratum in Stratum::ALL {
                let sel: Vec<usize> = (0..kept.len()).filter(|&i| stratum.contains(kept[i])).collect();
                if sel.is_empty() {
                    continue;
                }
                for (li, &lead) in leads.iter().enumerate() {
                    let mut stage: Vec<SkillRow> = Vec::with_capacity(lay.n_src);
                    let errors = |s: usize| -> Vec<f64> { sel.iter().map(|&i| scores[lay.score(v, m, li, s)][i].0).collect() };
                    let primary = errors(0);
                    for (s, src) in sources.iter().enumerate() {
                        let sc = &scores[lay.score(v, m, li, s)];
                        let e = errors(s);
                        let (rmse_mean, rmse_std) = mean_std(&e).expect("non-empty");
                        let accs: Vec<f64> = sel.iter().filter_map(|&i| sc[i].1).collect();
                        let acc_ms = mean_std(&accs);
                        let idx = (v * lay.n_leads + li) * lay.n_src + s;
                        let per_cell: Vec<Option<f64>> = (0..n)
                            .map(|c| {
                                match stratum {
                                    Stratum::All => add_moments(&moments[0][idx][c], &moments[1][idx][c]),
                                    Stratum::Mamjja => moments[0][idx][c],
                                    Stratum::Sondjf => moments[1][idx][c],
                                }
                                .rpc()
                            })
                            .collect();
                        let rpc = rpc_field(&per_cell, &mask.weights).ok().map(|(r, _)| r);
                        let (dm_stat, dm_p) = if s == 0 || e.len() < 2 {
                            (None, None)
                        } else {
                            let h = dm_horizon(lead, cfg.init_stride, e.len());
                            match dm_test(&primary, &e, h) {
                                Ok((st, p)) => (Some(st), Some(p)),
                                Err(_) => (None, None),
                            }
                        };
                        stage.push(SkillRow {
                            variable: name.clone(),
                            mask: mask.name.clone(),
                            stratum,
                            lead,
                            source: src.name().into(),
                            n: sel.len(),
                            rmse: rmse_mean,
                            rmse_std,
                            acc: acc_ms.map(|x| x.0),
                            acc_std: acc_ms.map(|x| x.1),
                            rpc,
                            dm_stat,
                            dm_p,
                            rmse_improvement: None,
                            acc_improvement: None,
                        });
                    }
                    if let Some(c) = clim_src {
                        let (b_rmse, b_acc) = (stage[c].rmse, stage[c].acc);
                        for r in &mut stage {
                            r.rmse_improvement = improvement(r.rmse, b_rmse, true);
                            r.acc_improvement = match (r.acc, b_acc) {
                                (Some(a), Some(b)) => improvement(a, b, false),
                                _ => None,
                            };
                        }
                    }
                    rows.extend(stage);
                }
            }
        }
    }

    let mut distributions = Vec::with_capacity(dist.len());
    for (v, (name, _)) in lay.vars.iter().enumerate() {
        for (m, mask) in masks.iter().enumerate() {
            for (li, &lead) in leads.iter().enumerate() {
                for s in 0..=lay.n_src {
                    distributions.push(AnomalyDistribution {
                        variable: name.clone(),
                        mask: mask.name.clone(),
                        lead,
                        source: if s == lay.n_src { "truth".into() } else { sources[s].name().into() },
                        values: std::mem::take(&mut dist[lay.dist(v, m, li, s)]),
                    });
                }
            }
        }
    }

    Ok(SkillReport {
        rows,
        inits: kept,
        incidents,
        distributions,
        anomaly_reference: cfg.anomaly_reference,
        weighting: "area".into(),
    })
}

fn add_moments(a: &RpcMoments, b: &RpcMoments) -> RpcMoments {
    RpcMoments {
        n: a.n + b.n,
        sp: a.sp + b.sp,
        st: a.st + b.st,
        spp: a.spp + b.spp,
        stt: a.stt + b.stt,
        spt: a.spt + b.spt,
    }
}

/// Mean and population standard deviation.
fn mean_std(x: &[f64]) -> Option<(f64, f64)> {
    if x.is_empty() {
        return None;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / x.len() as f64;
    Some((m, v.sqrt()))
}

