use rand::Rng;

use super::config::{embed_split, ModelConfig, UpsampleMethod, FFN_EXPANSION};
use super::layers::{self, Mode, Pattern};
use super::params::{Init, ParamSpec, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::{PadMode, Tensor};

/// Final upsampling factor from the first encoder stage back to the grid.
const FINAL_UP: usize = 4;
/// Kernel of the skip fusion convolution.
const FUSE_KERNEL: usize = 3;

fn embed_prefix(stage: usize, k: usize) -> String {
    format!("enc{stage}.embed.k{k}")
}

fn up_specs(prefix: &str, method: UpsampleMethod, din: usize, dout: usize, r: usize) -> Vec<ParamSpec> {
    match method {
        UpsampleMethod::PixelShuffle => layers::conv_specs(&format!("{prefix}.proj"), din, dout * r * r, 1),
        UpsampleMethod::Transpose => layers::conv_transpose_specs(&format!("{prefix}.proj"), din, dout, 2 * r),
        UpsampleMethod::Interpolate => layers::conv_specs(&format!("{prefix}.proj"), din, dout, 1),
    }
}

/// Upsamples `x` by `r` to `dout` channels with the configured method.
fn upsample(ps: &ParamStore, prefix: &str, method: UpsampleMethod, x: &Tensor, r: usize) -> Result<Tensor> {
    let proj = format!("{prefix}.proj");
    match method {
        UpsampleMethod::PixelShuffle => layers::conv(ps, &proj, x, 1)?.pixel_shuffle(r),
        // k = 2r, padding r/2 gives exactly r*h output rows
        UpsampleMethod::Transpose => layers::conv_transpose(ps, &proj, x, r, r / 2),
        UpsampleMethod::Interpolate => layers::conv(ps, &proj, &x.upsample_bilinear(r)?, 1),
    }
}

/// Parameter list of a configuration, in construction order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let mut cin = cfg.in_channels;
    for (s, &d) in cfg.block_dims.iter().enumerate() {
        for (k, share) in embed_split(d, cfg.kernels(s))? {
            specs.extend(layers::conv_specs(&embed_prefix(s, k), cin, share, k));
        }
        for sub in ["sda", "lda"] {
            specs.extend(layers::norm_specs(&format!("enc{s}.{sub}.norm"), d));
            specs.extend(layers::attention_specs(&format!("enc{s}.{sub}"), d));
            specs.extend(layers::norm_specs(&format!("enc{s}.{sub}_ffn.norm"), d));
            specs.extend(layers::ffn_specs(&format!("enc{s}.{sub}_ffn"), d, FFN_EXPANSION));
        }
        cin = d;
    }
    let n = cfg.n_blocks();
    for s in (0..n.saturating_sub(1)).rev() {
        let (din, dout) = (cfg.block_dims[s + 1], cfg.block_dims[s]);
        specs.extend(up_specs(&format!("dec{s}.up"), cfg.upsample_method, din, dout, 2));
        specs.extend(layers::conv_specs(&format!("dec{s}.fuse"), 2 * dout, dout, FUSE_KERNEL));
    }
    if n > 0 {
        let d = cfg.block_dims[0];
        specs.extend(up_specs("final_up", cfg.upsample_method, d, d, FINAL_UP));
        cin = d;
    }
    let mut head = layers::conv_specs("head", cin, cfg.out_channels, 1);
    if cfg.zero_init_head {
        head[0].init = Init::Zeros;
    }
    specs.extend(head);
    Ok(specs)
}

/// Number of trainable scalars implied by a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_specs(cfg)?.iter().map(ParamSpec::numel).sum())
}

/// Cross-scale embedding: parallel strided convolutions at several kernel
/// sizes, concatenated along channels.
pub fn cross_embed(
    ps: &ParamStore,
    stage: usize,
    x: &Tensor,
    kernels: &[usize],
    stride: usize,
    out_dim: usize,
) -> Result<Tensor> {
    let [_, h, w] = *x.shape() else {
        return Err(shape_err!("cross_embed: expected [C, H, W], got {:?}", x.shape()));
    };
    if h % stride != 0 || w % stride != 0 {
        return Err(shape_err!("cross_embed: {h}x{w} not divisible by stride {stride}"));
    }
    let parts = embed_split(out_dim, kernels)?
        .into_iter()
        .map(|(k, _)| layers::conv(ps, &embed_prefix(stage, k), x, stride))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_channels(&parts)
}

/// One encoder stage: embedding, then pre-norm residual short- and
/// long-distance attention sublayers, each followed by a feed-forward unit.
pub fn crossformer_block(
    ps: &ParamStore,
    cfg: &ModelConfig,
    stage: usize,
    x: &Tensor,
    mode: &mut Mode,
) -> Result<Tensor> {
    let d = cfg.block_dims[stage];
    let e = cross_embed(ps, stage, x, cfg.kernels(stage), cfg.stride(stage), d)?;
    let (h, w) = (e.shape()[1], e.shape()[2]);
    let heads = cfg.heads_per_block[stage];
    let mut t = layers::to_tokens(&e)?;
    let subs = [
        ("sda", Pattern::Short(cfg.sda_group)),
        ("lda", Pattern::Long(cfg.lda_intervals[stage])),
    ];
    for (sub, pattern) in subs {
        let p = format!("enc{stage}.{sub}");
        let n = layers::norm(ps, &format!("{p}.norm"), &t)?;
        t = t.add(&layers::attention(ps, &p, &n, h, w, pattern, heads, mode)?)?;
        let f = format!("enc{stage}.{sub}_ffn");
        let n = layers::norm(ps, &format!("{f}.norm"), &t)?;
        t = t.add(&layers::ffn(ps, &f, &n, mode)?)?;
    }
    layers::from_tokens(&t, h, w)
}

/// Upsamples `x` by two, joins the skip features and fuses them.
pub fn decoder_up_block(
    ps: &ParamStore,
    stage: usize,
    method: UpsampleMethod,
    x: &Tensor,
    skip: &Tensor,
) -> Result<Tensor> {
    let p = format!("dec{stage}");
    let up = upsample(ps, &format!("{p}.up"), method, x, 2)?;
    if up.shape() != skip.shape() {
        return Err(shape_err!(
            "decoder: upsampled {:?} does not match skip {:?}",
            up.shape(),
            skip.shape()
        ));
    }
    let joined = Tensor::concat_channels(&[up, skip.clone()])?;
    Ok(layers::conv(ps, &format!("{p}.fuse"), &joined, 1)?.gelu())
}

/// Mirror-pads the trailing axes by `before`/`after`, reflecting repeatedly
/// when the pad exceeds the extent.
fn mirror_pad_any(x: &Tensor, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor> {
    let mut x = x.clone();
    let (mut t, mut b, mut l, mut r) = (top, bottom, left, right);
    while t + b + l + r > 0 {
        let n = x.ndim();
        let (h, w) = (x.shape()[n - 2], x.shape()[n - 1]);
        if (t + b > 0 && h < 2) || (l + r > 0 && w < 2) {
            return Err(shape_err!("cannot mirror-pad a {h}x{w} field"));
        }
        let step = |p: &mut usize, ext: usize| {
            let s = (*p).min(ext - 1);
            *p -= s;
            s
        };
        let (st, sb) = (step(&mut t, h), step(&mut b, h));
        let (sl, sr) = (step(&mut l, w), step(&mut r, w));
        x = x.pad2d(st, sb, sl, sr, PadMode::Mirror)?;
    }
    Ok(x)
}

/// The emulator: `[in_channels, H, W]` state to `[out_channels, H, W]`.
#[derive(Clone)]
pub struct DroughtFormer {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl DroughtFormer {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let specs = param_specs(&config)?;
        let params = ParamStore::init(&specs, config.use_spectral_norm, rng)?;
        Ok(Self { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ParamStore) -> Self {
        Self { config, params }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_count()
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        forward_with(&self.config, &self.params, x, mode)
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, &mut Mode::eval())
    }
}

/// Forward pass with an explicit parameter store (e.g. a fork used for
/// gradient computation).
pub fn forward_with(cfg: &ModelConfig, ps: &ParamStore, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
    let [c, h, w] = *x.shape() else {
        return Err(shape_err!("model: expected [C, H, W], got {:?}", x.shape()));
    };
    if c != cfg.in_channels {
        return Err(shape_err!("model: {c} input channels, configured for {}", cfg.in_channels));
    }
    let n = cfg.n_blocks();
    if n == 0 {
        return layers::conv(ps, "head", x, 1);
    }
    let m = cfg.spatial_multiple();
    let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
    let (top, left) = (ph / 2, pw / 2);
    let padded = mirror_pad_any(x, top, ph - top, left, pw - left)?;

    let mut skips = Vec::with_capacity(n);
    let mut y = padded;
    for stage in 0..n {
        y = crossformer_block(ps, cfg, stage, &y, mode)?;
        skips.push(y.clone());
    }
    for stage in (0..n - 1).rev() {
        y = decoder_up_block(ps, stage, cfg.upsample_method, &y, &skips[stage])?;
    }
    y = upsample(ps, "final_up", cfg.upsample_method, &y, FINAL_UP)?;
    let out = layers::conv(ps, "head", &y, 1)?;
    out.crop2d(top, left, h, w)
}
