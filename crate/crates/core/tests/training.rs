use std::collections::BTreeMap;

use chrono::NaiveDate;
use droughtformer::model::{Init, Mode, ModelConfig, ParamSpec, ParamStore};
use droughtformer::physics::PhysicsConfig;
use droughtformer::pipeline::{preprocess, synth_generate, Archive, Normalizer, PreprocessConfig, SynthConfig, VariableCatalog};
use droughtformer::training::{
    cosine_lr, latitude_weighted_mse, load_checkpoint, save_checkpoint, AdamW, AdamWParams, Emulator, TrainConfig,
    TrainData, Trainer,
};
use droughtformer::{no_grad, DroughtFormer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn archive() -> (Archive, VariableCatalog) {
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
    let cfg = PreprocessConfig {
        train_years: vec![2001],
        ..PreprocessConfig::default()
    };
    (preprocess(&raw, &cat, &cfg).unwrap(), cat)
}

fn emulator(a: &Archive, cat: &VariableCatalog, physics: PhysicsConfig) -> Emulator {
    let norm = Normalizer::new(cat, a.stats.as_ref().unwrap()).unwrap();
    Emulator::new(cat.clone(), norm, physics, &a.grid).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        block_dims: vec![8, 16],
        heads_per_block: vec![1, 2],
        lda_intervals: vec![2, 2],
        embed_kernels_block1: vec![4, 8],
        ..ModelConfig::tiny()
    }
}

fn flat(ps: &ParamStore) -> Vec<f64> {
    ps.iter().flat_map(|(_, t)| t.to_vec()).collect()
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn single(name: &str, values: Vec<f64>) -> ParamStore {
    let spec = ParamSpec {
        name: name.into(),
        shape: vec![values.len()],
        init: Init::Zeros,
        spectral: false,
    };
    let mut ps = ParamStore::init(&[spec], false, &mut rng(0)).unwrap();
    ps.set_values(name, values).unwrap();
    ps
}

#[test]
fn adamw_first_step_worked_example() {
    let mut ps = single("w", vec![1.0]);
    let mut opt = AdamW::new(AdamWParams::default());
    let grads = BTreeMap::from([("w".to_string(), vec![0.5])]);
    opt.apply(&mut ps, &grads, 1e-4, 1e-5).unwrap();
    let delta = ps.get("w").unwrap().to_vec()[0] - 1.0;
    let oracle = -1e-4 * (0.5 / (0.25f64.sqrt() + 1e-8)) - 1e-4 * 1e-5 * 1.0;
    assert!((delta - oracle).abs() < 1e-16, "{delta} vs {oracle}");
    assert!((delta + 1.00001e-4).abs() < 1e-11);
}

#[test]
fn adamw_zero_gradient_without_decay_is_fixed_point() {
    let mut ps = single("w", vec![0.3, -2.0, 7.5]);
    let mut opt = AdamW::new(AdamWParams::default());
    let grads = BTreeMap::from([("w".to_string(), vec![0.0; 3])]);
    for _ in 0..10 {
        opt.apply(&mut ps, &grads, 1e-3, 0.0).unwrap();
    }
    assert_eq!(ps.get("w").unwrap().to_vec(), vec![0.3, -2.0, 7.5]);
}

#[test]
fn adamw_matches_reference_over_100_steps() {
    let mut r = rng(21);
    let n = 17;
    let theta0: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut ps = single("p", theta0.clone());
    let hp = AdamWParams {
        beta1: 0.85,
        beta2: 0.995,
        eps: 1e-7,
    };
    let mut opt = AdamW::new(hp);
    let (mut th, mut m, mut v) = (theta0, vec![0.0; n], vec![0.0; n]);
    for t in 1..=100 {
        let g: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let lr = r.random_range(1e-5..1e-2);
        let l2 = r.random_range(0.0..1e-3);
        opt.apply(&mut ps, &BTreeMap::from([("p".to_string(), g.clone())]), lr, l2).unwrap();
        for i in 0..n {
            m[i] = 0.85 * m[i] + 0.15 * g[i];
            v[i] = 0.995 * v[i] + 0.005 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.85f64.powi(t));
            let vh = v[i] / (1.0 - 0.995f64.powi(t));
            th[i] -= lr * l2 * th[i] + lr * mh / (vh.sqrt() + 1e-7);
        }
    }
    let got = ps.get("p").unwrap().to_vec();
    let err = got.iter().zip(&th).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "max deviation {err}");
}

#[test]
fn cosine_schedule_points() {
    assert_eq!(cosine_lr(0, 400, 1e-4, 0.0), 1e-4);
    assert_eq!(cosine_lr(400, 400, 1e-4, 0.0), 0.0);
    assert!((cosine_lr(200, 400, 1e-4, 1e-5) - 5.5e-5).abs() < 1e-18);
    let mut prev = f64::INFINITY;
    for s in 0..=400 {
        let lr = cosine_lr(s, 400, 1e-4, 0.0);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn weighted_mse_matches_triple_loop() {
    let mut r = rng(4);
    for _ in 0..200 {
        let (c, h, w) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let n = c * h * w;
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let rw: Vec<f64> = (0..h).map(|_| r.random_range(0.05..1.0)).collect();
        let got = latitude_weighted_mse(
            &Tensor::new(vec![c, h, w], p.clone()).unwrap(),
            &Tensor::new(vec![c, h, w], t.clone()).unwrap(),
            &rw,
        )
        .unwrap()
        .item();
        let wm = rw.iter().sum::<f64>() / h as f64;
        let mut s = 0.0;
        for k in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let idx = (k * h + i) * w + j;
                    s += rw[i] / wm * (p[idx] - t[idx]).powi(2);
                }
            }
        }
        let oracle = s / n as f64;
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn uniform_weights_give_plain_mse() {
    let p = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let t = Tensor::zeros(vec![1, 2, 2]);
    let l = latitude_weighted_mse(&p, &t, &[0.7, 0.7]).unwrap().item();
    assert!((l - 7.5).abs() < 1e-12);
}

#[test]
fn zero_head_starts_at_weighted_mean_square_of_target() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::all_off());
    let cfg = ModelConfig {
        zero_init_head: true,
        ..small_model()
    };
    let m = DroughtFormer::new(cfg.clone(), &mut rng(1)).unwrap();
    let s = emu.sample(&a, date(2001, 3, 10), 1).unwrap();
    let (loss, _) = emu.rollout_loss(&cfg, &m.params, &s, &mut Mode::eval()).unwrap();
    let t = s.targets[0].data();
    let (c, h, w) = (t.len() / a.n_cells(), a.grid.n_lat(), a.grid.n_lon());
    let rw = a.grid.row_weights();
    let wm = rw.iter().sum::<f64>() / h as f64;
    let mut sum = 0.0;
    for (idx, v) in t.iter().enumerate() {
        sum += rw[(idx / w) % h] / wm * v * v;
    }
    let oracle = sum / (c * h * w) as f64;
    assert!((loss.item() - oracle).abs() < 1e-12 * oracle);
}

#[test]
fn one_step_rollout_is_the_single_step_loss() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let cfg = small_model();
    let m = DroughtFormer::new(cfg.clone(), &mut rng(2)).unwrap();
    let s = emu.sample(&a, date(2001, 7, 1), 1).unwrap();
    let (roll, _) = emu.rollout_loss(&cfg, &m.params, &s, &mut Mode::eval()).unwrap();
    let (y, _) = emu.step(&cfg, &m.params, &s.input, &mut Mode::eval()).unwrap();
    let direct = latitude_weighted_mse(&y, &s.targets[0], &a.grid.row_weights()).unwrap();
    assert_eq!(roll.item().to_bits(), direct.item().to_bits());
}

#[test]
fn three_step_rollout_matches_manual_chain() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let cfg = small_model();
    let m = DroughtFormer::new(cfg.clone(), &mut rng(3)).unwrap();
    let d0 = date(2001, 8, 20);
    let s = emu.sample(&a, d0, 3).unwrap();
    let (roll, reports) = emu.rollout_loss(&cfg, &m.params, &s, &mut Mode::eval()).unwrap();
    assert_eq!(reports.len(), 3);

    // chain by hand from archive data: predicted prognostics, true forcings
    let p = cat.n_prognostic();
    let norm = Normalizer::new(&cat, a.stats.as_ref().unwrap()).unwrap();
    let mut x = norm.normalize_input(&a.assemble_input(&cat, d0).unwrap()).unwrap();
    let mut losses = Vec::new();
    for j in 1..=3u64 {
        let raw = m.predict(&x).unwrap();
        let (y, _) = emu.constrain(&x, &raw).unwrap();
        let day = d0 + chrono::Days::new(j);
        let target = norm.normalize_output(&a.assemble_output(&cat, day).unwrap()).unwrap();
        losses.push(latitude_weighted_mse(&y, &target, &a.grid.row_weights()).unwrap().item());
        let next = norm.normalize_input(&a.assemble_input(&cat, day).unwrap()).unwrap();
        let (nc, hw) = (next.shape()[0], a.n_cells());
        let mut data = next.to_vec();
        data[..p * hw].copy_from_slice(&y.data()[..p * hw]);
        x = Tensor::new(vec![nc, a.grid.n_lat(), a.grid.n_lon()], data).unwrap();
    }
    let oracle = losses.iter().sum::<f64>() / 3.0;
    assert!((roll.item() - oracle).abs() < 1e-12 * oracle);
}

#[test]
fn rollout_gradient_matches_finite_differences() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let cfg = ModelConfig {
        use_spectral_norm: false,
        ..small_model()
    };
    let mut m = DroughtFormer::new(cfg.clone(), &mut rng(5)).unwrap();
    let s = emu.sample(&a, date(2001, 5, 5), 2).unwrap();
    m.params.zero_grads();
    let (loss, _) = emu.rollout_loss(&cfg, &m.params, &s, &mut Mode::eval()).unwrap();
    loss.backward().unwrap();
    let grads = m.params.grads();
    let mut r = rng(6);
    let names: Vec<String> = m.params.names().map(String::from).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let name = &names[r.random_range(0..names.len())];
        let base = m.params.get(name).unwrap().to_vec();
        let i = r.random_range(0..base.len());
        let eval = |v: f64, ps: &mut ParamStore| {
            let mut d = base.clone();
            d[i] = v;
            ps.set_values(name, d).unwrap();
            no_grad(|| emu.rollout_loss(&cfg, ps, &s, &mut Mode::eval())).unwrap().0.item()
        };
        let fp = eval(base[i] + h, &mut m.params);
        let fm = eval(base[i] - h, &mut m.params);
        m.params.set_values(name, base.clone()).unwrap();
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads[name][i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3, "max relative error {worst}");
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        lr_max: 1e-3,
        batch_size: 2,
        single_step_epochs: 2,
        multistep_epochs: 1,
        rollout_steps: 2,
        max_samples_per_epoch: Some(4),
        max_val_samples: Some(2),
        ..TrainConfig::default()
    }
}

fn new_trainer(cfg: TrainConfig, seed: u64) -> Trainer {
    let model = ModelConfig {
        dropout: 0.05,
        ..small_model()
    };
    Trainer::new(DroughtFormer::new(model, &mut rng(seed)).unwrap(), cfg, seed).unwrap()
}

#[test]
fn training_is_deterministic_and_resumes_exactly() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let data = TrainData::from_years(&a, &[2001], &[2002]);

    let mut full = new_trainer(quick_cfg(), 9);
    let mut steps = Vec::new();
    full.fit(&emu, &data, None, &mut |r| steps.push(r.clone())).unwrap();
    assert!(full.is_done());
    assert_eq!(full.history.len(), 3);
    assert_eq!(steps.len(), 6);
    assert!(steps.iter().all(|s| s.loss.is_finite() && s.moisture_residual.is_some()));

    let mut again = new_trainer(quick_cfg(), 9);
    again.fit(&emu, &data, None, &mut |_| {}).unwrap();
    assert_eq!(again.history, full.history);
    assert_eq!(flat(&again.model.params), flat(&full.model.params));

    // stop mid-epoch, checkpoint, reload and finish
    let dir = tempfile::tempdir().unwrap();
    let mut part = new_trainer(quick_cfg(), 9);
    part.fit(&emu, &data, Some(3), &mut |_| {}).unwrap();
    assert_eq!(part.progress.batch, 1);
    save_checkpoint(&part, &cat.hash(), dir.path()).unwrap();
    let mut resumed = load_checkpoint(dir.path(), Some(cat.hash().as_str())).unwrap();
    assert_eq!(flat(&resumed.model.params), flat(&part.model.params));
    assert_eq!(resumed.opt, part.opt);
    assert_eq!(resumed.progress, part.progress);
    let mut rest = Vec::new();
    resumed.fit(&emu, &data, None, &mut |r| rest.push(r.clone())).unwrap();
    assert_eq!(rest, steps[3..]);
    assert_eq!(resumed.history, full.history);
    assert_eq!(flat(&resumed.model.params), flat(&full.model.params));
}

#[test]
fn single_step_phase_equals_one_step_multistep_phase() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let data = TrainData::from_years(&a, &[2001], &[2002]);
    let single = TrainConfig {
        single_step_epochs: 2,
        multistep_epochs: 0,
        ..quick_cfg()
    };
    let multi = TrainConfig {
        single_step_epochs: 0,
        multistep_epochs: 2,
        rollout_steps: 1,
        ..quick_cfg()
    };
    let mut s = new_trainer(single, 4);
    s.fit(&emu, &data, None, &mut |_| {}).unwrap();
    let mut m = new_trainer(multi, 4);
    m.fit(&emu, &data, None, &mut |_| {}).unwrap();
    assert_eq!(s.history, m.history);
    let bits = |t: &Trainer| flat(&t.model.params).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&s), bits(&m));
}

#[test]
fn checkpoint_rejects_tampering_and_foreign_catalogs() {
    let (a, cat) = archive();
    let emu = emulator(&a, &cat, PhysicsConfig::default());
    let data = TrainData::from_years(&a, &[2001], &[2002]);
    let mut t = new_trainer(quick_cfg(), 2);
    t.fit(&emu, &data, Some(1), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&t, &cat.hash(), dir.path()).unwrap();
    assert!(load_checkpoint(dir.path(), Some("another-catalog")).is_err());
    assert!(load_checkpoint(dir.path(), None).is_ok());

    let payload = dir.path().join("params.f64");
    let mut bytes = std::fs::read(&payload).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&payload, &bytes).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());

    save_checkpoint(&t, &cat.hash(), dir.path()).unwrap();
    let manifest = dir.path().join("manifest.toml");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, format!("{text}\nsurprise = 1\n")).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());
    std::fs::write(&manifest, text.replace("format = ", "format_ = ")).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());
}

#[test]
fn invalid_train_config_is_rejected() {
    let m = DroughtFormer::new(small_model(), &mut rng(0)).unwrap();
    let bad = TrainConfig {
        rollout_steps: 0,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(m.clone(), bad, 0).is_err());
    let bad = TrainConfig {
        lr_max: 0.0,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(m, bad, 0).is_err());
}
