//! Drought indices computed from analysed or predicted fields.

mod fdii;
mod forecast;
mod percentile;
mod sesr;

pub use fdii::{fdii, fdii_field, write_event_table, FdiiConfig, FdiiResult};
pub use forecast::{
    analysis_indices, annual_fdii, forecast_indices, sequence_indices, truth_sequence, IndexClimatology, SequenceIndices, SM_LAYERS,
};
pub use percentile::{
    calendar_pentads, pentad_aggregate, pentad_cube, percentile_rank, PentadPool, PentadSeries, SeriesSource,
    PENTADS_PER_YEAR, PENTAD_DAYS, POOL_HALFWIDTH_DAYS,
};
pub use sesr::{anomaly, esr, esr_climatology, esr_cube, sesr, AnomalyField, PET_EPS, SESR_STD_EPS};
