use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learned upsampling used by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMethod {
    #[default]
    PixelShuffle,
    Transpose,
    Interpolate,
}

impl UpsampleMethod {
    pub const ALL: [UpsampleMethod; 3] = [
        UpsampleMethod::PixelShuffle,
        UpsampleMethod::Transpose,
        UpsampleMethod::Interpolate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpsampleMethod::PixelShuffle => "pixel_shuffle",
            UpsampleMethod::Transpose => "transpose",
            UpsampleMethod::Interpolate => "interpolate",
        }
    }
}

/// Network hyper-parameters. `block_dims`, `heads_per_block` and
/// `lda_intervals` have one entry per encoder stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub block_dims: Vec<usize>,
    pub heads_per_block: Vec<usize>,
    pub sda_group: usize,
    pub lda_intervals: Vec<usize>,
    pub embed_kernels_block1: Vec<usize>,
    pub embed_kernels_later: Vec<usize>,
    pub dropout: f64,
    pub use_spectral_norm: bool,
    pub upsample_method: UpsampleMethod,
    /// Start the output head at zero.
    pub zero_init_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 25,
            out_channels: 23,
            block_dims: vec![128, 256, 512, 1024],
            heads_per_block: vec![4, 8, 16, 32],
            sda_group: 5,
            lda_intervals: vec![2, 2, 2, 1],
            embed_kernels_block1: vec![4, 8, 16, 32],
            embed_kernels_later: vec![2, 4],
            dropout: 0.05,
            use_spectral_norm: true,
            upsample_method: UpsampleMethod::PixelShuffle,
            zero_init_head: false,
        }
    }
}

/// Feed-forward hidden width multiplier.
pub const FFN_EXPANSION: usize = 4;
/// Downsampling of the first embedding stage.
pub const STAGE1_STRIDE: usize = 4;
/// Downsampling of every later embedding stage.
pub const LATER_STRIDE: usize = 2;

impl ModelConfig {
    /// Desk-scale network with the default layout and small widths.
    pub fn tiny() -> Self {
        Self {
            block_dims: vec![8, 16, 32, 64],
            heads_per_block: vec![1, 2, 4, 8],
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn stride(&self, stage: usize) -> usize {
        if stage == 0 {
            STAGE1_STRIDE
        } else {
            LATER_STRIDE
        }
    }

    pub fn kernels(&self, stage: usize) -> &[usize] {
        if stage == 0 {
            &self.embed_kernels_block1
        } else {
            &self.embed_kernels_later
        }
    }

    /// Total downsampling factor of the encoder; inputs are padded to a
    /// multiple of this.
    pub fn spatial_multiple(&self) -> usize {
        (0..self.n_blocks()).map(|s| self.stride(s)).product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_blocks();
        let bad = |msg: String| Err(Error::Config(format!("model: {msg}")));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.heads_per_block.len() != n || self.lda_intervals.len() != n {
            return bad(format!(
                "{n} block dims but {} head counts and {} lda intervals",
                self.heads_per_block.len(),
                self.lda_intervals.len()
            ));
        }
        if self.block_dims.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("block dims {:?} must be non-decreasing", self.block_dims));
        }
        for (i, (&d, &h)) in self.block_dims.iter().zip(&self.heads_per_block).enumerate() {
            if h == 0 || d % h != 0 {
                return bad(format!("block {i}: {h} heads do not divide dim {d}"));
            }
        }
        if self.sda_group == 0 || self.lda_intervals.contains(&0) {
            return bad("attention group sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for stage in 0..n {
            let ks = self.kernels(stage);
            if ks.is_empty() || ks.contains(&0) {
                return bad(format!("stage {stage}: empty or zero embedding kernel"));
            }
            embed_split(self.block_dims[stage], ks)?;
        }
        Ok(())
    }
}

/// Output channels given to each embedding kernel. Kernels are taken in
/// ascending size; each larger kernel gets half the share of the previous
/// one and the smallest kernel absorbs the remainder.
pub fn embed_split(dim: usize, kernels: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut ks = kernels.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if dim < ks.len() {
        return Err(Error::Config(format!(
            "embedding width {dim} smaller than {} kernels",
            ks.len()
        )));
    }
    let mut shares: Vec<usize> = (0..ks.len()).map(|i| (dim >> (i + 1)).max(1)).collect();
    let rest: usize = shares[1..].iter().sum();
    if rest >= dim {
        return Err(Error::Config(format!(
            "embedding width {dim} cannot be split over kernels {ks:?}"
        )));
    }
    shares[0] = dim - rest;
    Ok(ks.into_iter().zip(shares).collect())
}
