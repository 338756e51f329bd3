//! Policy evaluation: off-policy value estimation by fitted Q evaluation,
//! consultation-mode dose-agreement metrics, dose statistics and dose–MAP
//! correlation, Gaussian confidence bands, and the assembled report.

pub mod bands;
pub mod fqe;
pub mod metrics;
pub mod report;

pub use bands::{
    confidence_band, BandCurve, DEFAULT_BAND_SAMPLES, DEFAULT_BAND_SIGMA, DEFAULT_QUANTILES,
};
pub use fqe::{fqe_evaluate, FqeConfig, FqeOutcome};
pub use metrics::{
    behavior_doses, correlation_comparison, map_series, mape, mean_behavior_dose, mean_dose,
    pearson, recommended_doses, rmse_conventional, rmse_paper, MAPE_EPSILON,
};
pub use report::{
    evaluate_agent, fqe_behavior_value, read_report_json, write_episode_curves, write_report_json,
    BandConfig, EvalReport,
};
