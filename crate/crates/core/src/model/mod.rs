//! The CrossFormer emulator: cross-scale embedding encoder with short- and
//! long-distance attention, and a skip-connected upsampling decoder.

mod config;
pub mod layers;
mod network;
mod params;

pub use config::{embed_split, ModelConfig, UpsampleMethod, FFN_EXPANSION, LATER_STRIDE, STAGE1_STRIDE};
pub use layers::{Mode, Pattern};
pub use network::{
    count_parameters, cross_embed, crossformer_block, decoder_up_block, forward_with, param_specs,
    DroughtFormer,
};
pub use params::{Init, ParamSpec, ParamStore, SPECTRAL_WARMUP};
