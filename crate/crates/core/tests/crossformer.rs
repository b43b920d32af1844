use droughtformer::model::layers::{self, attention, attention_specs, to_tokens};
use droughtformer::model::{
    count_parameters, cross_embed, crossformer_block, decoder_up_block, param_specs, Mode, ModelConfig,
    ParamStore, Pattern, UpsampleMethod,
};
use droughtformer::tensor::gradcheck::{check_at, random_tensor, random_values};
use droughtformer::{DroughtFormer, PadMode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn store(specs: &[droughtformer::model::ParamSpec], seed: u64) -> ParamStore {
    ParamStore::init(specs, false, &mut rng(seed)).unwrap()
}

/// Naive multi-head attention over explicit token groups, from raw
/// weights. `x` is `[N, D]` row-major.
fn attention_oracle(ps: &ParamStore, prefix: &str, x: &[f64], n: usize, d: usize, groups: &[Vec<usize>], heads: usize) -> Vec<f64> {
    let lin = |name: &str, inp: &[f64]| -> Vec<f64> {
        let w = ps.get(&format!("{prefix}.{name}.weight")).unwrap().data().to_vec();
        let b = ps.get(&format!("{prefix}.{name}.bias")).unwrap().data().to_vec();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for o in 0..d {
                let mut s = b[o];
                for k in 0..d {
                    s += inp[i * d + k] * w[k * d + o];
                }
                out[i * d + o] = s;
            }
        }
        out
    };
    let (q, k, v) = (lin("q", x), lin("k", x), lin("v", x));
    let dh = d / heads;
    let mut att = vec![0.0; n * d];
    for g in groups {
        for h in 0..heads {
            for &i in g {
                let logits: Vec<f64> = g
                    .iter()
                    .map(|&j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    att[i * d + h * dh + c] = g.iter().zip(&e).map(|(&j, p)| p / z * v[j * d + h * dh + c]).sum();
                }
            }
        }
    }
    lin("out", &att)
}

#[test]
fn short_distance_matches_windowed_oracle() {
    let (d, h, w) = (8, 10, 10);
    let ps = store(&attention_specs("a", d), 1);
    let x = random_tensor(&mut rng(2), &[h * w, d]);
    let y = attention(&ps, "a", &x, h, w, Pattern::Short(5), 2, &mut Mode::eval()).unwrap();
    let mut groups = Vec::new();
    for bi in 0..2 {
        for bj in 0..2 {
            groups.push((0..5).flat_map(|i| (0..5).map(move |j| (bi * 5 + i) * w + bj * 5 + j)).collect());
        }
    }
    let oracle = attention_oracle(&ps, "a", x.data(), h * w, d, &groups, 2);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn long_distance_matches_dilated_oracle() {
    let (d, h, w) = (8, 6, 6);
    let ps = store(&attention_specs("a", d), 3);
    let x = random_tensor(&mut rng(4), &[h * w, d]);
    let y = attention(&ps, "a", &x, h, w, Pattern::Long(2), 4, &mut Mode::eval()).unwrap();
    let mut groups = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            groups.push((0..h * w).filter(|t| (t / w) % 2 == a && (t % w) % 2 == b).collect());
        }
    }
    let oracle = attention_oracle(&ps, "a", x.data(), h * w, d, &groups, 4);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn single_window_and_interval_one_are_global() {
    let (d, h, w) = (8, 5, 5);
    let ps = store(&attention_specs("a", d), 5);
    let x = random_tensor(&mut rng(6), &[h * w, d]);
    let sda = attention(&ps, "a", &x, h, w, Pattern::Short(5), 2, &mut Mode::eval()).unwrap();
    let lda = attention(&ps, "a", &x, h, w, Pattern::Long(1), 2, &mut Mode::eval()).unwrap();
    let oracle = attention_oracle(&ps, "a", x.data(), h * w, d, &[(0..h * w).collect()], 2);
    for ((a, b), c) in sda.data().iter().zip(lda.data()).zip(&oracle) {
        assert_eq!(a, b);
        assert!((a - c).abs() < 1e-10);
    }
}

/// Rewrites one layer of a store in place.
fn overwrite(ps: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let n = ps.get(name).unwrap().numel();
    ps.set_values(name, (0..n).map(f).collect()).unwrap();
}

#[test]
fn zero_logits_give_window_mean_of_values() {
    let (d, h, w) = (4, 4, 4);
    let mut ps = store(&attention_specs("a", d), 7);
    overwrite(&mut ps, "a.q.weight", |_| 0.0);
    overwrite(&mut ps, "a.q.bias", |_| 0.0);
    for name in ["v", "out"] {
        overwrite(&mut ps, &format!("a.{name}.weight"), |i| if i / d == i % d { 1.0 } else { 0.0 });
        overwrite(&mut ps, &format!("a.{name}.bias"), |_| 0.0);
    }
    let x = random_tensor(&mut rng(8), &[h * w, d]);
    let y = attention(&ps, "a", &x, h, w, Pattern::Short(2), 1, &mut Mode::eval()).unwrap();
    for t in 0..h * w {
        let (r0, c0) = ((t / w) / 2 * 2, (t % w) / 2 * 2);
        for c in 0..d {
            let mean: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(i, j)| x.data()[((r0 + i) * w + c0 + j) * d + c])
                .sum::<f64>()
                / 4.0;
            assert!((y.data()[t * d + c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn singleton_groups_return_value_projection() {
    let (d, h, w) = (4, 3, 3);
    let mut ps = store(&attention_specs("a", d), 9);
    overwrite(&mut ps, "a.out.weight", |i| if i / d == i % d { 1.0 } else { 0.0 });
    overwrite(&mut ps, "a.out.bias", |_| 0.0);
    let x = random_tensor(&mut rng(10), &[h * w, d]);
    let y = attention(&ps, "a", &x, h, w, Pattern::Long(3), 2, &mut Mode::eval()).unwrap();
    let v = layers::linear(&ps, "a.v", &x).unwrap();
    for (a, b) in y.data().iter().zip(v.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cross_embed_identity_single_kernel() {
    let cfg = ModelConfig {
        in_channels: 3,
        block_dims: vec![3],
        heads_per_block: vec![1],
        lda_intervals: vec![1],
        embed_kernels_block1: vec![1],
        use_spectral_norm: false,
        ..ModelConfig::tiny()
    };
    let mut ps = store(&param_specs(&cfg).unwrap(), 11);
    overwrite(&mut ps, "enc0.embed.k1.weight", |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let x = random_tensor(&mut rng(12), &[3, 6, 5]);
    let y = cross_embed(&ps, 0, &x, &[1], 1, 3).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn cross_embed_is_concatenation_of_convolutions() {
    let cfg = ModelConfig {
        in_channels: 5,
        block_dims: vec![16],
        heads_per_block: vec![2],
        lda_intervals: vec![2],
        use_spectral_norm: false,
        ..ModelConfig::tiny()
    };
    let ps = store(&param_specs(&cfg).unwrap(), 13);
    let x = random_tensor(&mut rng(14), &[5, 32, 32]);
    let y = cross_embed(&ps, 0, &x, &[4, 8, 16, 32], 4, 16).unwrap();
    assert_eq!(y.shape(), &[16, 8, 8]);
    let mut expected = Vec::new();
    for k in [4, 8, 16, 32] {
        let w = ps.get(&format!("enc0.embed.k{k}.weight")).unwrap();
        let b = ps.get(&format!("enc0.embed.k{k}.bias")).unwrap();
        expected.extend(x.conv2d(w, Some(b), 4, PadMode::Mirror).unwrap().to_vec());
    }
    assert_eq!(y.data(), &expected[..]);
}

#[test]
fn stage_shapes_at_default_widths() {
    let full = ModelConfig::default();
    // Only stage 1 and 2 parameters are needed; build them from the full list.
    let specs: Vec<_> = param_specs(&full)
        .unwrap()
        .into_iter()
        .filter(|s| s.name.starts_with("enc0.") || s.name.starts_with("enc1."))
        .collect();
    let ps = ParamStore::init(&specs, false, &mut rng(15)).unwrap();
    let x = random_tensor(&mut rng(16), &[25, 64, 128]);
    let e1 = cross_embed(&ps, 0, &x, &[4, 8, 16, 32], 4, 128).unwrap();
    assert_eq!(e1.shape(), &[128, 16, 32]);
    let b1 = crossformer_block(&ps, &full, 0, &x, &mut Mode::eval()).unwrap();
    assert_eq!(b1.shape(), &[128, 16, 32]);
    let b2 = crossformer_block(&ps, &full, 1, &b1, &mut Mode::eval()).unwrap();
    assert_eq!(b2.shape(), &[256, 8, 16]);
}

#[test]
fn decoder_shapes_and_constant_interpolation() {
    for method in UpsampleMethod::ALL {
        let cfg = ModelConfig {
            block_dims: vec![8, 16],
            heads_per_block: vec![1, 2],
            lda_intervals: vec![2, 2],
            upsample_method: method,
            ..ModelConfig::tiny()
        };
        let specs: Vec<_> = param_specs(&cfg).unwrap().into_iter().filter(|s| s.name.starts_with("dec0.")).collect();
        let ps = store(&specs, 17);
        let x = random_tensor(&mut rng(18), &[16, 4, 8]);
        let skip = random_tensor(&mut rng(19), &[8, 8, 16]);
        let y = decoder_up_block(&ps, 0, method, &x, &skip).unwrap();
        assert_eq!(y.shape(), &[8, 8, 16]);
    }
    // Bilinear upsampling followed by a 1x1 projection keeps a constant field constant.
    let c = Tensor::full(vec![4, 3, 5], 1.7);
    let up = c.upsample_bilinear(2).unwrap();
    let ps = store(&layers::conv_specs("p", 4, 2, 1), 20);
    let y = layers::conv(&ps, "p", &up, 1).unwrap();
    for ch in 0..2 {
        let plane = &y.data()[ch * 60..(ch + 1) * 60];
        assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-12));
    }
}

#[test]
fn decoder_matches_full_size_reference_shape() {
    let cfg = ModelConfig {
        block_dims: vec![128, 256, 512, 1024],
        ..ModelConfig::default()
    };
    let specs: Vec<_> = param_specs(&cfg).unwrap().into_iter().filter(|s| s.name.starts_with("dec2.")).collect();
    let ps = ParamStore::init(&specs, false, &mut rng(21)).unwrap();
    let x = random_tensor(&mut rng(22), &[1024, 4, 8]);
    let skip = random_tensor(&mut rng(23), &[512, 8, 16]);
    let y = decoder_up_block(&ps, 2, UpsampleMethod::PixelShuffle, &x, &skip).unwrap();
    assert_eq!(y.shape(), &[512, 8, 16]);
}

#[test]
fn model_output_matches_input_extent() {
    let model = DroughtFormer::new(ModelConfig::tiny(), &mut rng(24)).unwrap();
    for (h, w) in [(32, 64), (33, 47), (40, 32)] {
        let x = random_tensor(&mut rng(25), &[25, h, w]);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.shape(), &[23, h, w]);
    }
    assert!(model.predict(&random_tensor(&mut rng(26), &[24, 32, 32])).is_err());
}

#[test]
fn small_grids_are_padded_repeatedly() {
    let model = DroughtFormer::new(ModelConfig::tiny(), &mut rng(27)).unwrap();
    let y = model.predict(&random_tensor(&mut rng(28), &[25, 16, 32])).unwrap();
    assert_eq!(y.shape(), &[23, 16, 32]);
}

#[test]
fn evaluation_forward_is_deterministic() {
    let model = DroughtFormer::new(ModelConfig::tiny(), &mut rng(29)).unwrap();
    let x = random_tensor(&mut rng(30), &[25, 32, 32]);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn zero_block_model_is_output_head() {
    let cfg = ModelConfig {
        block_dims: vec![],
        heads_per_block: vec![],
        lda_intervals: vec![],
        ..ModelConfig::tiny()
    };
    assert_eq!(count_parameters(&cfg).unwrap(), 25 * 23 + 23);
}

#[test]
fn single_block_count_is_closed_form() {
    let d = 8;
    let cfg = ModelConfig {
        block_dims: vec![d],
        heads_per_block: vec![2],
        lda_intervals: vec![2],
        ..ModelConfig::tiny()
    };
    // embedding shares 4, 2, 1, 1 at kernels 4, 8, 16, 32
    let embed: usize = [(4, 4), (8, 2), (16, 1), (32, 1)].iter().map(|(k, s)| s * 25 * k * k + s).sum();
    let norm = 2 * d;
    let attn = 4 * (d * d + d);
    let ffn = (d * 4 * d + 4 * d) + (4 * d * d + d);
    let block = embed + 2 * (norm + attn + norm + ffn);
    let final_up = d * 16 * d + 16 * d;
    let head = d * 23 + 23;
    assert_eq!(count_parameters(&cfg).unwrap(), block + final_up + head);
    let model = DroughtFormer::new(cfg, &mut rng(31)).unwrap();
    assert_eq!(model.parameter_count(), block + final_up + head);
}

#[test]
fn block_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        in_channels: 3,
        block_dims: vec![8],
        heads_per_block: vec![2],
        lda_intervals: vec![2],
        ..ModelConfig::tiny()
    };
    let ps = ParamStore::init(&param_specs(&cfg).unwrap(), true, &mut rng(32)).unwrap();
    let x0 = random_values(&mut rng(33), 3 * 16 * 16);
    let report = check_at(&mut rng(34), &[3, 16, 16], &x0, Some(40), |x| {
        crossformer_block(&ps, &cfg, 0, x, &mut Mode::eval()).unwrap()
    });
    assert!(report.passed(), "{report:?}");
}

#[test]
fn tokens_round_trip() {
    let x = random_tensor(&mut rng(35), &[3, 2, 4]);
    let t = to_tokens(&x).unwrap();
    assert_eq!(t.shape(), &[8, 3]);
    assert_eq!(t.data()[3 * 5 + 1], x.data()[8 + 5]);
    let back = layers::from_tokens(&t, 2, 4).unwrap();
    assert_eq!(back.data(), x.data());
}
