use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use droughtformer::evaluation::{
    acc, climatology_forecast, dm_horizon, dm_test, improvement, persistence_forecast, read_scorecard, rmse, rollout_evaluate,
    rpc_cell, rpc_field, scorecard_export, AnomalyReference, Climatology, EvalConfig, FnForecaster, Forecaster,
    ModelForecaster, Persistence, RegionMask, Stratum,
};
use droughtformer::model::ModelConfig;
use droughtformer::physics::PhysicsConfig;
use droughtformer::pipeline::calendar::{doy_slot, FEB28_SLOT, LEAP_SLOT, MAR1_SLOT};
use droughtformer::pipeline::{
    build_climatology, preprocess, synth_generate, Archive, ClimatologyTable, GridSpec, Level, Normalizer, PreprocessConfig,
    Role, SynthConfig, VariableCatalog, VariableDef,
};
use droughtformer::training::Emulator;
use droughtformer::{DroughtFormer, Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Absolute below 1, relative above.
fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------- brute-force oracles ----------

fn rmse_oracle(p: &[f64], t: &[f64], w: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        if w[i] > 0.0 {
            num += w[i] * (p[i] - t[i]).powi(2);
            den += w[i];
        }
    }
    (num / den).sqrt()
}

/// Raw-moment form of the weighted correlation.
fn acc_oracle(p: &[f64], t: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let e = |f: &dyn Fn(usize) -> f64| (0..p.len()).map(|i| w[i] * f(i)).sum::<f64>() / sw;
    let (ep, et) = (e(&|i| p[i]), e(&|i| t[i]));
    let cov = e(&|i| p[i] * t[i]) - ep * et;
    let vp = e(&|i| p[i] * p[i]) - ep * ep;
    let vt = e(&|i| t[i] * t[i]) - et * et;
    cov / (vp * vt).sqrt()
}

/// Two-pass moments.
fn rpc_oracle(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / n;
    let (mp, mt) = (mean(p), mean(t));
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let cov = p.iter().zip(t).map(|(a, b)| (a - mp) * (b - mt)).sum::<f64>() / n;
    let rho = cov / (var(p, mp) * var(t, mt)).sqrt();
    let err: Vec<f64> = p.iter().zip(t).map(|(a, b)| a - b).collect();
    let var_err = var(&err, mean(&err));
    let var_m = var(p, mp);
    rho / (var_m / (var_m + var_err)).sqrt()
}

fn dm_oracle(ea: &[f64], eb: &[f64], h: usize) -> (f64, f64) {
    let t = ea.len();
    let d: Vec<f64> = (0..t).map(|i| ea[i] * ea[i] - eb[i] * eb[i]).collect();
    let dbar = d.iter().sum::<f64>() / t as f64;
    let mut gam = vec![0.0; h];
    for (k, g) in gam.iter_mut().enumerate() {
        for i in k..t {
            *g += (d[i] - dbar) * (d[i - k] - dbar);
        }
        *g /= t as f64;
    }
    if gam[0] == 0.0 {
        return (0.0, 1.0);
    }
    let mut v = gam[0];
    for g in &gam[1..] {
        v += 2.0 * g;
    }
    if v <= 0.0 {
        v = gam[0];
    }
    let stat = dbar / (v / t as f64).sqrt();
    (stat, erfc(stat.abs() / std::f64::consts::SQRT_2))
}

fn normal_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

#[test]
fn metrics_match_brute_force_on_random_instances() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let n = r.random_range(3..40);
        let p = normal_vec(&mut r, n);
        let t = normal_vec(&mut r, n);
        let mut w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        w[0] = 0.0;
        assert!(close(rmse(&p, &t, &w).unwrap(), rmse_oracle(&p, &t, &w), 1e-12));
        assert!(close(acc(&p, &t, &w).unwrap().unwrap(), acc_oracle(&p, &t, &w), 1e-12));
        let rpc = rpc_cell(&p, &t).unwrap().unwrap();
        assert!(close_rel(rpc, rpc_oracle(&p, &t), 1e-12), "{rpc} vs {}", rpc_oracle(&p, &t));
        let h = r.random_range(1..=n / 2);
        let (s, pv) = dm_test(&p, &t, h).unwrap();
        let (so, po) = dm_oracle(&p, &t, h);
        assert!(close_rel(s, so, 1e-12) && close(pv, po, 1e-12), "{s} {so} {pv} {po}");
    }
}

#[test]
fn rpc_worked_example_and_degenerate_cases() {
    let truth = [1.0, -1.0, 2.0, -2.0];
    let pred = [0.5, -0.5, 1.0, -1.0];
    let r = rpc_cell(&pred, &truth).unwrap().unwrap();
    assert!(close(r, 2f64.sqrt(), 1e-12), "{r}");
    assert_eq!(rpc_cell(&truth, &truth).unwrap(), Some(1.0));
    assert_eq!(rpc_cell(&[3.0; 4], &truth).unwrap(), None);
    assert!(rpc_cell(&pred[..2], &truth[..2]).is_err());
    assert!(rpc_field(&[None, None], &[1.0, 1.0]).is_err());
    let (m, k) = rpc_field(&[Some(1.0), None, Some(3.0)], &[1.0, 5.0, 3.0]).unwrap();
    assert_eq!((m, k), (2.5, 2));
}

#[test]
fn dm_worked_example_and_edges() {
    // Squared-error differential equals d when e_a^2 = d and e_b = 0.
    let ea: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|d| d.sqrt()).collect();
    let (s, _) = dm_test(&ea, &[0.0; 3], 1).unwrap();
    assert!(close(s, 4.2426, 1e-4), "{s}");
    assert!(close(s, 2.0 / (2.0f64 / 9.0).sqrt(), 1e-12));
    assert_eq!(dm_test(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 1).unwrap(), (0.0, 1.0));
    let d = droughtformer::evaluation::dm_from_differential(&[1.0, -1.0, 1.0, -1.0], 1).unwrap();
    assert_eq!(d.0, 0.0);
    assert!(dm_test(&[1.0; 3], &[0.0; 3], 2).is_err());
    assert_eq!(dm_horizon(0, 1, 100), 1);
    assert_eq!(dm_horizon(10, 3, 100), 4);
    assert_eq!(dm_horizon(90, 1, 20), 10);
}

#[test]
fn metric_properties() {
    let mut r = rng(3);
    for _ in 0..100 {
        let n = 20;
        let (a, b, c) = (normal_vec(&mut r, n), normal_vec(&mut r, n), normal_vec(&mut r, n));
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let k = r.random_range(0.1..10.0);
        let scaled: Vec<f64> = a.iter().map(|x| k * x).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let base = acc(&a, &b, &w).unwrap().unwrap();
        assert!(close(acc(&scaled, &b, &w).unwrap().unwrap(), base, 1e-12));
        assert!(close(acc(&neg, &b, &w).unwrap().unwrap(), -base, 1e-12));
        assert!(rmse(&a, &c, &w).unwrap() <= rmse(&a, &b, &w).unwrap() + rmse(&b, &c, &w).unwrap() + 1e-12);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.75).collect();
        assert!(close(rmse(&shifted, &a, &w).unwrap(), 0.75, 1e-12));
        let twice: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert!(close(acc(&twice, &a, &w).unwrap().unwrap(), 1.0, 1e-12));
        assert!(close(acc(&neg, &a, &w).unwrap().unwrap(), -1.0, 1e-12));
    }
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(acc(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), None);
    assert!(rmse(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    assert_eq!(improvement(2.0, 2.0, true), Some(0.0));
    assert_eq!(improvement(0.5, 0.5, false), Some(0.0));
    assert_eq!(improvement(1.0, 2.0, true), Some(50.0));
    assert_eq!(improvement(0.6, 0.5, false).map(|x| (x * 1e9).round() / 1e9), Some(20.0));
}

// ---------- one-variable archives ----------

fn one_var_catalog() -> VariableCatalog {
    VariableCatalog::from_defs(vec![VariableDef {
        name: "x".into(),
        role: Role::Prognostic,
        units: "1".into(),
        level: Level::Surface,
        nonneg: false,
        categorical: false,
        source: "test".into(),
        input_index: None,
        output_index: None,
    }])
    .unwrap()
}

fn grid() -> GridSpec {
    GridSpec::regular(-30.0, 30.0, 8, 0.0, 337.5, 16).unwrap()
}

/// Even integers, so means of repeated values and the leap-slot average
/// are exact.
fn pattern(slot: usize, cell: usize) -> f64 {
    if slot == LEAP_SLOT {
        return 0.5 * (pattern(FEB28_SLOT, cell) + pattern(MAR1_SLOT, cell));
    }
    2.0 * ((slot * 3 + cell * 5) % 17) as f64 - 10.0
}

fn noise_archive(years: &[i32], train: &[i32], s: f64, seed: u64) -> Archive {
    let mut a = Archive::for_years(grid(), years).unwrap();
    let n = a.n_cells();
    let dates = a.dates();
    let mut r = rng(seed);
    let mut cube = Vec::with_capacity(dates.len() * n);
    for d in &dates {
        for c in 0..n {
            let e: f64 = r.sample(StandardNormal);
            cube.push((pattern(doy_slot(*d), c) + s * e) as f32);
        }
    }
    let table = build_climatology("x", &cube, &dates, n, train, 15).unwrap();
    a.insert_daily("x", cube).unwrap();
    a.climatology.insert("x".into(), table);
    a
}

fn exact_table(n: usize) -> ClimatologyTable {
    ClimatologyTable {
        variable: "x".into(),
        n_cells: n,
        pool_halfwidth: 15,
        years: vec![],
        mean: (0..366).flat_map(|s| (0..n).map(move |c| pattern(s, c))).collect(),
        std: vec![1.0; 366 * n],
    }
}

fn eval_cfg(years: Vec<i32>, leads: Vec<usize>) -> EvalConfig {
    EvalConfig {
        years,
        leads,
        ..EvalConfig::default()
    }
}

#[test]
fn climatology_forecast_is_a_table_lookup() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002, 2003], &[2001, 2002], 1.0, 1);
    let n = a.n_cells();
    let table = &a.climatology["x"];
    let init = NaiveDate::from_ymd_opt(2003, 2, 20).unwrap();
    for lead in [0usize, 1, 9, 40] {
        let f = climatology_forecast(&a, &cat, init, lead).unwrap();
        let slot = doy_slot(init + Days::new(lead as u64));
        assert_eq!(f.data(), &table.mean[slot * n..(slot + 1) * n]);
    }
    let same_doy = NaiveDate::from_ymd_opt(2001, 3, 1).unwrap();
    assert_eq!(
        climatology_forecast(&a, &cat, init, 9).unwrap().to_vec(),
        climatology_forecast(&a, &cat, same_doy, 0).unwrap().to_vec()
    );
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let p = persistence_forecast(&x, 3);
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|t| t.to_vec() == x.to_vec()));
}

#[test]
fn pure_climatology_archive_has_zero_climatology_error() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002, 2003], &[2001, 2002], 0.0, 1);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let clim = Climatology { catalog: &cat };
    let cfg = EvalConfig {
        init_stride: 7,
        ..eval_cfg(vec![2003], vec![0, 1, 2, 10, 30])
    };
    let rep = rollout_evaluate(&a, &cat, &[&clim], &masks, &cfg).unwrap();
    assert!(rep.rows.iter().all(|r| r.rmse == 0.0));
}

#[test]
fn baseline_sanity_on_climatology_plus_noise() {
    let cat = one_var_catalog();
    let s = 0.8;
    let years: Vec<i32> = (2001..=2017).collect();
    let train: Vec<i32> = (2001..=2016).collect();
    let mut a = noise_archive(&years, &train, s, 7);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let (clim, pers) = (Climatology { catalog: &cat }, Persistence { catalog: &cat });
    let cfg = eval_cfg(vec![2017], vec![0, 1, 5, 20]);

    // Estimated climatology: its own sampling error adds s^2 / n_years.
    let rep = rollout_evaluate(&a, &cat, &[&clim, &pers], &masks, &cfg).unwrap();
    assert!(rep.inits.len() >= 200);
    let expected = s * (1.0 + 1.0 / train.len() as f64).sqrt();
    for lead in [0, 1, 5, 20] {
        let c = rep.row("x", "global", Stratum::All, lead, "climatology").unwrap();
        assert!((c.rmse / s - 1.0).abs() < 0.05, "lead {lead}: {}", c.rmse);
        assert!((c.rmse / expected - 1.0).abs() < 0.02, "lead {lead}: {}", c.rmse);
    }
    let p0 = rep.row("x", "global", Stratum::All, 0, "persistence").unwrap();
    assert_eq!(p0.rmse, 0.0);

    // The generating climatology itself.
    a.climatology.insert("x".into(), exact_table(a.n_cells()));
    let rep = rollout_evaluate(&a, &cat, &[&clim], &masks, &cfg).unwrap();
    for lead in [0, 1, 5, 20] {
        let c = rep.row("x", "global", Stratum::All, lead, "climatology").unwrap();
        assert!((c.rmse / s - 1.0).abs() < 0.02, "lead {lead}: {}", c.rmse);
    }
}

#[test]
fn persistence_error_matches_direct_recomputation() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002], &[2001], 1.0, 5);
    let mask = RegionMask::global(&a.grid).unwrap();
    let pers = Persistence { catalog: &cat };
    let cfg = EvalConfig {
        init_stride: 5,
        ..eval_cfg(vec![2002], vec![0, 3, 12])
    };
    let rep = rollout_evaluate(&a, &cat, &[&pers], &[mask.clone()], &cfg).unwrap();
    for lead in [0usize, 3, 12] {
        let per_init: Vec<f64> = rep
            .inits
            .iter()
            .map(|&d| {
                let t0 = a.field("x", d).unwrap();
                let tl = a.field("x", d + Days::new(lead as u64)).unwrap();
                rmse_oracle(&t0, &tl, &mask.weights)
            })
            .collect();
        let m = per_init.iter().sum::<f64>() / per_init.len() as f64;
        let row = rep.row("x", "global", Stratum::All, lead, "persistence").unwrap();
        assert!(close(row.rmse, m, 1e-12));
        assert_eq!(row.n, rep.inits.len());
    }
}

fn oracle_sources(cat: &VariableCatalog) -> (impl Forecaster + '_, impl Forecaster + '_, impl Forecaster + '_) {
    let emit_clim = FnForecaster {
        name: "clim_emitter".into(),
        f: move |a: &Archive, init: NaiveDate, max_lead: usize| {
            (0..=max_lead).map(|l| climatology_forecast(a, cat, init, l)).collect()
        },
    };
    let identity = FnForecaster {
        name: "identity".into(),
        f: move |a: &Archive, init: NaiveDate, max_lead: usize| Ok(vec![a.assemble_output(cat, init)?; max_lead + 1]),
    };
    let perfect = FnForecaster {
        name: "perfect".into(),
        f: move |a: &Archive, init: NaiveDate, max_lead: usize| {
            (0..=max_lead)
                .map(|l| a.assemble_output(cat, init + Days::new(l as u64)))
                .collect()
        },
    };
    (emit_clim, identity, perfect)
}

#[test]
fn oracle_models_reproduce_baselines() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002, 2003], &[2001, 2002], 1.0, 9);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let (clim, pers) = (Climatology { catalog: &cat }, Persistence { catalog: &cat });
    let (emit_clim, identity, perfect) = oracle_sources(&cat);
    let cfg = EvalConfig {
        init_stride: 3,
        ..eval_cfg(vec![2003], vec![0, 1, 4, 15])
    };
    for reference in [AnomalyReference::AnnualMean, AnomalyReference::DayOfYear] {
        let cfg = EvalConfig {
            anomaly_reference: reference,
            ..cfg.clone()
        };
        let rep = rollout_evaluate(&a, &cat, &[&emit_clim, &clim, &pers, &identity, &perfect], &masks, &cfg).unwrap();
        for stratum in Stratum::ALL {
            for lead in [0, 1, 4, 15] {
                let get = |s: &str| rep.row("x", "global", stratum, lead, s).unwrap();
                let (e, c) = (get("clim_emitter"), get("climatology"));
                assert_eq!((e.rmse, e.rmse_std, e.acc, e.rpc), (c.rmse, c.rmse_std, c.acc, c.rpc));
                assert_eq!(c.rmse_improvement, Some(0.0));
                if let Some(x) = c.acc_improvement {
                    assert_eq!(x, 0.0);
                }
                let (i, p) = (get("identity"), get("persistence"));
                assert_eq!((i.rmse, i.rmse_std, i.acc, i.rpc), (p.rmse, p.rmse_std, p.acc, p.rpc));
                let f = get("perfect");
                assert_eq!(f.rmse, 0.0);
                assert!(close(f.acc.unwrap(), 1.0, 1e-12));
                assert!(close(f.rpc.unwrap(), 1.0, 1e-12));
                // The primary source against itself.
                assert_eq!((c.dm_stat, c.dm_p), (Some(0.0), Some(1.0)));
            }
        }
        match reference {
            AnomalyReference::AnnualMean => {
                let c = rep.row("x", "global", Stratum::All, 4, "climatology").unwrap();
                assert!(c.acc.is_some() && c.rpc.is_some());
            }
            AnomalyReference::DayOfYear => {
                let c = rep.row("x", "global", Stratum::All, 4, "climatology").unwrap();
                assert_eq!((c.acc, c.rpc), (None, None));
            }
        }
        for lead in [0, 1, 4, 15] {
            let emitted = rep.distribution("x", "global", lead, "clim_emitter").unwrap();
            assert!(emitted.values.iter().all(|&v| v == 0.0));
            let truth = rep.distribution("x", "global", lead, "truth").unwrap();
            let perfect = rep.distribution("x", "global", lead, "perfect").unwrap();
            assert_eq!(truth.values, perfect.values);
            assert_eq!(truth.values.len(), rep.inits.len());
        }
    }
}

#[test]
fn strata_rpc_and_distributions_match_recomputation() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002], &[2001], 1.0, 13);
    let mask = RegionMask::global(&a.grid).unwrap();
    let n = a.n_cells();
    let pers = Persistence { catalog: &cat };
    let cfg = EvalConfig {
        init_stride: 4,
        anomaly_reference: AnomalyReference::DayOfYear,
        ..eval_cfg(vec![2002], vec![2])
    };
    let rep = rollout_evaluate(&a, &cat, &[&pers], &[mask.clone()], &cfg).unwrap();
    let table = &a.climatology["x"];
    let anom = |d: NaiveDate, at: NaiveDate| -> Vec<f64> {
        let f = a.field("x", d).unwrap();
        f.iter().zip(table.mean_on(at)).map(|(x, m)| x - m).collect()
    };
    let counts: BTreeMap<Stratum, usize> =
        Stratum::ALL.iter().map(|&s| (s, rep.row("x", "global", s, 2, "persistence").unwrap().n)).collect();
    assert_eq!(counts[&Stratum::All], counts[&Stratum::Mamjja] + counts[&Stratum::Sondjf]);
    for stratum in Stratum::ALL {
        let inits: Vec<NaiveDate> = rep.inits.iter().copied().filter(|&d| stratum.contains(d)).collect();
        let per_cell: Vec<Option<f64>> = (0..n)
            .map(|c| {
                let (mut p, mut t) = (vec![], vec![]);
                for &d in &inits {
                    let v = d + Days::new(2);
                    p.push(anom(d, v)[c]);
                    t.push(anom(v, v)[c]);
                }
                Some(rpc_oracle(&p, &t))
            })
            .collect();
        let (expected, _) = rpc_field(&per_cell, &mask.weights).unwrap();
        let row = rep.row("x", "global", stratum, 2, "persistence").unwrap();
        assert!(close(row.rpc.unwrap(), expected, 1e-12), "{stratum:?}");
    }
    let dist = rep.distribution("x", "global", 2, "truth").unwrap();
    let direct: Vec<f64> = rep
        .inits
        .iter()
        .map(|&d| {
            let v = d + Days::new(2);
            mask.mean(&anom(v, v))
        })
        .collect();
    for (x, y) in dist.values.iter().zip(&direct) {
        assert!(close(*x, *y, 1e-12));
    }
    let (lo, mean, hi) = dist.summary().unwrap();
    assert_eq!(lo, direct.iter().copied().fold(f64::INFINITY, f64::min));
    assert_eq!(hi, direct.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    assert!(close(mean, direct.iter().sum::<f64>() / direct.len() as f64, 1e-12));
}

#[test]
fn non_finite_rollouts_become_incidents() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002], &[2001], 1.0, 2);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let bad_day = NaiveDate::from_ymd_opt(2002, 3, 11).unwrap();
    let flaky = FnForecaster {
        name: "flaky".into(),
        f: |a: &Archive, init: NaiveDate, max_lead: usize| {
            if init == bad_day {
                return Err(Error::Numeric("diverged".into()));
            }
            let mut out = vec![a.assemble_output(&cat, init)?; max_lead + 1];
            if init == bad_day + Days::new(5) {
                out[max_lead] = Tensor::new(out[0].shape().to_vec(), vec![f64::NAN; out[0].numel()])?;
            }
            Ok(out)
        },
    };
    let pers = Persistence { catalog: &cat };
    let cfg = EvalConfig {
        max_inits: Some(120),
        ..eval_cfg(vec![2002], vec![0, 3])
    };
    let rep = rollout_evaluate(&a, &cat, &[&flaky, &pers], &masks, &cfg).unwrap();
    assert_eq!(rep.incidents.len(), 2);
    assert_eq!(rep.incidents[0].init, bad_day);
    assert_eq!(rep.incidents[1].init, bad_day + Days::new(5));
    assert_eq!(rep.inits.len(), 118);
    assert!(!rep.inits.contains(&bad_day));
    let row = rep.row("x", "global", Stratum::All, 3, "flaky").unwrap();
    assert!(row.rmse.is_finite() && row.n == 118);
}

#[test]
fn scorecard_round_trip() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001, 2002], &[2001], 1.0, 4);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let (clim, pers) = (Climatology { catalog: &cat }, Persistence { catalog: &cat });
    let cfg = EvalConfig {
        init_stride: 6,
        ..eval_cfg(vec![2002], vec![0, 1, 7])
    };
    let rep = rollout_evaluate(&a, &cat, &[&pers, &clim], &masks, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = BTreeMap::from([("config_hash".to_string(), "abc".to_string())]);
    let files = scorecard_export(&rep, dir.path(), &meta).unwrap();
    assert_eq!(files.len(), 4);
    let back = read_scorecard(&files[0]).unwrap();
    assert_eq!(back, rep.rows);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert!(text.starts_with(
        "variable,mask,stratum,lead,source,n,rmse,rmse_std,acc,acc_std,rpc,dm_stat,dm_p,rmse_improvement,acc_improvement"
    ));
    let meta_text = std::fs::read_to_string(&files[3]).unwrap();
    assert!(meta_text.contains("\"config_hash\": \"abc\"") && meta_text.contains("\"weighting\": \"area\""));
}

#[test]
fn africa_mask_keeps_land_inside_the_box() {
    let g = GridSpec::regular(-60.0, 60.0, 7, -40.0, 80.0, 7).unwrap();
    let lsm: Vec<f64> = (0..g.n_cells()).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let m = RegionMask::africa(&g, &lsm).unwrap();
    for (i, (&sel, &w)) in m.cells.iter().zip(&m.weights).enumerate() {
        let (la, lo) = (g.lat[i / 7], g.lon[i % 7]);
        let expect = lsm[i] >= 0.5 && (-35.0..=38.0).contains(&la) && (-18.0..=52.0).contains(&lo);
        assert_eq!(sel, expect, "cell {i}");
        assert_eq!(w > 0.0, expect);
    }
    let global = RegionMask::global(&g).unwrap();
    assert_eq!(global.n_selected(), g.n_cells());
    assert!(RegionMask::new("none", &g, vec![false; g.n_cells()]).is_err());
}

// ---------- the emulator as a forecast source ----------

fn small_model() -> ModelConfig {
    ModelConfig {
        block_dims: vec![8, 16],
        heads_per_block: vec![1, 2],
        lda_intervals: vec![2, 2],
        embed_kernels_block1: vec![4, 8],
        ..ModelConfig::tiny()
    }
}

#[test]
fn model_report_matches_recomputation_from_rollouts() {
    let raw = synth_generate(
        &SynthConfig {
            n_lat: 8,
            n_lon: 16,
            years: vec![2001, 2002],
            ..SynthConfig::default()
        },
        5,
    )
    .unwrap();
    let cat = VariableCatalog::standard();
    let a = preprocess(
        &raw,
        &cat,
        &PreprocessConfig {
            train_years: vec![2001],
            ..PreprocessConfig::default()
        },
    )
    .unwrap();
    let emu = Emulator::new(
        cat.clone(),
        Normalizer::new(&cat, a.stats.as_ref().unwrap()).unwrap(),
        PhysicsConfig::default(),
        &a.grid,
    )
    .unwrap();
    let model = DroughtFormer::new(small_model(), &mut rng(1)).unwrap();
    let mf = ModelForecaster { model: &model, emulator: &emu };
    let clim = Climatology { catalog: &cat };
    let masks = [RegionMask::global(&a.grid).unwrap(), RegionMask::by_name("africa", &a).unwrap()];
    let cfg = EvalConfig {
        variables: vec!["t2m".into(), "sm1".into()],
        init_stride: 40,
        ..eval_cfg(vec![2002], vec![0, 1, 3])
    };
    let rep = rollout_evaluate(&a, &cat, &[&mf, &clim], &masks, &cfg).unwrap();
    assert!(rep.incidents.is_empty());
    assert!(rep.inits.len() >= 8);

    // Lead 0 is the analysis; lead 1 is one constrained forward pass.
    let init = rep.inits[0];
    let f = mf.forecast(&a, init, 3).unwrap();
    assert_eq!(f[0].to_vec(), a.assemble_output(&cat, init).unwrap().to_vec());
    let x = emu.input_at(&a, init).unwrap();
    let (y, _) = droughtformer::no_grad(|| emu.step(&model.config, &model.params, &x, &mut droughtformer::model::Mode::eval()))
        .unwrap();
    assert_eq!(f[1].to_vec(), emu.normalizer.denormalize_output(&y).unwrap().to_vec());

    let n = a.n_cells();
    for (var, ch) in [("t2m", cat.output_index("t2m").unwrap()), ("sm1", cat.output_index("sm1").unwrap())] {
        for mask in &masks {
            for lead in [0usize, 1, 3] {
                let (mut e, mut accs) = (vec![], vec![]);
                for &d in &rep.inits {
                    let f = mf.forecast(&a, d, 3).unwrap();
                    let v = d + Days::new(lead as u64);
                    let p = &f[lead].data()[ch * n..(ch + 1) * n];
                    let t = a.field(var, v).unwrap();
                    e.push(rmse_oracle(p, &t, &mask.weights));
                    let table = &a.climatology[var];
                    let annual: Vec<f64> =
                        (0..n).map(|c| (0..365).map(|s| table.mean_at(s)[c]).sum::<f64>() / 365.0).collect();
                    let pa: Vec<f64> = p.iter().zip(&annual).map(|(x, m)| x - m).collect();
                    let ta: Vec<f64> = t.iter().zip(&annual).map(|(x, m)| x - m).collect();
                    accs.push(acc_oracle(&pa, &ta, &mask.weights));
                }
                let row = rep.row(var, &mask.name, Stratum::All, lead, "model").unwrap();
                let m = e.iter().sum::<f64>() / e.len() as f64;
                assert!(close(row.rmse, m, 1e-9 * m.max(1.0)), "{var} {} {lead}", mask.name);
                let ma = accs.iter().sum::<f64>() / accs.len() as f64;
                assert!(close(row.acc.unwrap(), ma, 1e-9), "{var} {} {lead}", mask.name);
            }
        }
    }

    // Thread count does not change the report.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again = pool.install(|| rollout_evaluate(&a, &cat, &[&mf, &clim], &masks, &cfg).unwrap());
    assert_eq!(again, rep);
}

#[test]
fn eval_config_validation() {
    let cat = one_var_catalog();
    let a = noise_archive(&[2001], &[2001], 1.0, 1);
    let masks = [RegionMask::global(&a.grid).unwrap()];
    let pers = Persistence { catalog: &cat };
    let bad = [
        EvalConfig { leads: vec![], ..eval_cfg(vec![2001], vec![]) },
        EvalConfig { init_stride: 0, ..eval_cfg(vec![2001], vec![1]) },
        eval_cfg(vec![1990], vec![1]),
        EvalConfig { variables: vec!["nope".into()], ..eval_cfg(vec![2001], vec![1]) },
    ];
    for cfg in bad {
        assert!(rollout_evaluate(&a, &cat, &[&pers], &masks, &cfg).is_err());
    }
}
