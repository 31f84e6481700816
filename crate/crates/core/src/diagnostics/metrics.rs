//! Pixel-wise skill scores per day, averaged over days.

use chrono::NaiveDate;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::FieldStack;

/// Scores for one image (or their day average). `None` marks a score that
/// is undefined, e.g. R² against a spatially constant truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub nse: Option<f64>,
    pub kge: Option<f64>,
    /// Pearson correlation.
    pub r: Option<f64>,
    /// mean(pred) / mean(true).
    pub beta: Option<f64>,
    /// std(pred) / std(true), population convention.
    pub gamma_ratio: Option<f64>,
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`; shared by R² and NSE, which are the same
/// expression.
fn efficiency(sse: f64, sst: f64) -> Option<f64> {
    (sst > 0.0).then(|| 1.0 - sse / sst)
}

pub fn kge(r: f64, beta: f64, gamma: f64) -> f64 {
    1.0 - ((r - 1.0).powi(2) + (beta - 1.0).powi(2) + (gamma - 1.0).powi(2)).sqrt()
}

/// Scores over paired samples (truth, prediction).
pub fn metrics_for_pairs(pairs: &[(f64, f64)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no valid pixels to score".into()));
    }
    let n = pairs.len() as f64;
    let mean_t = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_p = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut abs, mut sse, mut sst, mut spp, mut stp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, p) in pairs {
        let e = t - p;
        abs += e.abs();
        sse += e * e;
        let (dt, dp) = (t - mean_t, p - mean_p);
        sst += dt * dt;
        spp += dp * dp;
        stp += dt * dp;
    }
    let r = (sst > 0.0 && spp > 0.0).then(|| stp / (sst.sqrt() * spp.sqrt()));
    let beta = (mean_t != 0.0).then(|| mean_p / mean_t);
    let gamma_ratio = (sst > 0.0).then(|| (spp / n).sqrt() / (sst / n).sqrt());
    let kge = match (r, beta, gamma_ratio) {
        (Some(r), Some(b), Some(g)) => Some(kge(r, b, g)),
        _ => None,
    };
    Ok(MetricsReport {
        mae: abs / n,
        rmse: (sse / n).sqrt(),
        r2: efficiency(sse, sst),
        nse: efficiency(sse, sst),
        kge,
        r,
        beta,
        gamma_ratio,
    })
}

pub fn metrics_for_day(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
) -> Result<MetricsReport> {
    if pred.dim() != truth.dim() || mask.is_some_and(|m| m.dim() != pred.dim()) {
        return Err(Error::ShapeMismatch("prediction, truth and mask must share a shape".into()));
    }
    let pairs: Vec<(f64, f64)> = truth
        .indexed_iter()
        .zip(pred.iter())
        .filter(|((idx, t), p)| mask.is_none_or(|m| m[*idx]) && t.is_finite() && p.is_finite())
        .map(|((_, &t), &p)| (t, p))
        .collect();
    metrics_for_pairs(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_day: Vec<DayMetrics>,
    /// Each score averaged over the days where it is defined.
    pub mean: MetricsReport,
    /// Days whose R²/NSE were undefined (zero-variance truth).
    pub undefined_r2_days: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-day pixel-wise metrics, then their mean over days.
pub fn eval_metrics(pred: &FieldStack, truth: &FieldStack, mask: Option<ArrayView2<'_, bool>>) -> Result<EvalReport> {
    if pred.dates() != truth.dates() {
        return Err(Error::DateMismatch("prediction and truth cover different dates".into()));
    }
    if pred.grid().shape() != truth.grid().shape() {
        return Err(Error::ShapeMismatch("prediction and truth grids differ".into()));
    }
    if truth.n_days() == 0 {
        return Err(Error::Empty("no days to evaluate".into()));
    }
    let shape = truth.grid().shape();
    let combined = ndarray::Array2::from_shape_fn(shape, |(y, x)| {
        mask.is_none_or(|m| m[[y, x]]) && pred.is_valid(y, x) && truth.is_valid(y, x)
    });
    let per_day = (0..truth.n_days())
        .map(|t| {
            Ok(DayMetrics {
                date: truth.dates()[t],
                metrics: metrics_for_day(pred.day(t), truth.day(t), Some(combined.view()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_day.len() as f64;
    let m = |f: fn(&MetricsReport) -> Option<f64>| mean_defined(per_day.iter().map(|d| f(&d.metrics)));
    let mean = MetricsReport {
        mae: per_day.iter().map(|d| d.metrics.mae).sum::<f64>() / n,
        rmse: per_day.iter().map(|d| d.metrics.rmse).sum::<f64>() / n,
        r2: m(|r| r.r2),
        nse: m(|r| r.nse),
        kge: m(|r| r.kge),
        r: m(|r| r.r),
        beta: m(|r| r.beta),
        gamma_ratio: m(|r| r.gamma_ratio),
    };
    Ok(EvalReport { undefined_r2_days: per_day.iter().filter(|d| d.metrics.r2.is_none()).count(), per_day, mean })
}
