//! Spatial and temporal structure diagnostics and skill metrics.

pub mod metrics;
pub mod temporal;
pub mod variogram;

pub use metrics::{eval_metrics, metrics_for_day, DayMetrics, EvalReport, MetricsReport};
pub use temporal::{acf_pacf, lag_metrics, regional_mean_series, AcfPacf, LagCurve};
pub use variogram::{
    empirical_variogram, fit_spherical, haversine_km, mean_variogram, sample_pairs, stack_variogram, DistanceBins,
    PairSample, PixelPair, SphericalFit, VariogramEstimate,
};
