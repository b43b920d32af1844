//! Baselines, skill metrics, significance, region masks, rollout
//! evaluation and scorecards.

mod ablation;
mod forecaster;
mod mask;
mod metrics;
mod rollout;
mod scorecard;

pub use ablation::{run_ablation, AblationResult, AblationSetup, AblationVariant};
pub use forecaster::{
    climatology_forecast, persistence_forecast, Climatology, FnForecaster, Forecaster, ModelForecaster, Persistence,
};
pub use mask::{RegionMask, AFRICA_LAT, AFRICA_LON};
pub use metrics::{acc, dm_from_differential, dm_test, improvement, rmse, rpc_cell, rpc_field, RpcMoments, RPC_VAR_EPS};
pub use rollout::{
    dm_horizon, rollout_evaluate, AnomalyDistribution, AnomalyReference, EvalConfig, Incident, SkillReport, SkillRow,
    Stratum,
};
pub use scorecard::{read_scorecard, scorecard_export, DISTRIBUTION_FILE, INCIDENT_FILE, META_FILE, SCORECARD_FILE};
