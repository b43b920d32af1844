//! Variable catalog, grids, calendars, preprocessing, climatologies,
//! archive I/O and the synthetic data generator.

mod archive;
pub mod calendar;
mod catalog;
mod climatology;
pub mod grd1;
mod grid;
mod normalize;
pub mod preprocess;
mod process;
mod split;
mod synth;

pub use archive::{disassemble, Archive, Provenance, Stage};
pub use catalog::{Level, Role, VariableCatalog, VariableDef};
pub use climatology::{build_climatology, build_cyclic_forcing, ClimatologyTable, DEFAULT_POOL_HALFWIDTH};
pub use grid::GridSpec;
pub use normalize::{NormStats, Normalizer, VarStats};
pub use preprocess::{coarsen_4x, gap_fill_forward, running_accumulation_30, AccumulationMode};
pub use process::{cyclic_source, preprocess, PreprocessConfig};
pub use split::{DatasetSplit, Subset};
pub use synth::{synth_generate, DroughtEvent, SynthConfig};
