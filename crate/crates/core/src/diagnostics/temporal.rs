//! Temporal structure: regional-mean series, ACF/PACF and lagged image
//! similarity.

use chrono::Days;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::FieldStack;

pub const DEFAULT_MAX_LAG: usize = 30;
pub const DEFAULT_IMAGE_LAGS: usize = 10;

/// Per-day mean over pixels that are valid (mask and stack mask) and finite.
pub fn regional_mean_series(stack: &FieldStack, mask: Option<ArrayView2<'_, bool>>) -> Result<Vec<f64>> {
    if mask.is_some_and(|m| m.dim() != stack.grid().shape()) {
        return Err(Error::ShapeMismatch("mask does not match grid".into()));
    }
    (0..stack.n_days())
        .map(|t| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for ((y, x), &v) in stack.day(t).indexed_iter() {
                if mask.is_none_or(|m| m[[y, x]]) && stack.is_valid(y, x) && v.is_finite() {
                    sum += v;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::Empty(format!("no valid pixels on {}", stack.dates()[t])));
            }
            Ok(sum / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfPacf {
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
    pub n: usize,
}

/// Sample autocorrelation at lags 0..=max_lag with the biased (1/n)
/// autocovariance, so `acf[0] == 1`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag + 1 {
        return Err(Error::InvalidParameter(format!("series of length {n} too short for {max_lag} lags")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(Error::ZeroVariance("series is constant".into()));
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for k in 1..=max_lag {
        let ck = dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        acf.push(ck / c0);
    }
    Ok(acf)
}

/// Durbin–Levinson recursion: partial autocorrelations at lags 1..=K from
/// autocorrelations `rho[0..=K]`.
pub fn durbin_levinson(rho: &[f64]) -> Vec<f64> {
    let k_max = rho.len().saturating_sub(1);
    let mut pacf = Vec::with_capacity(k_max);
    let mut phi: Vec<f64> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let num = rho[k] - (1..k).map(|j| phi[j - 1] * rho[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * rho[j]).sum::<f64>();
        let kk = num / den;
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - kk * prev[k - j - 1];
        }
        phi.push(kk);
        pacf.push(kk);
    }
    pacf
}

pub fn acf_pacf(series: &[f64], max_lag: usize) -> Result<AcfPacf> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be at least 1".into()));
    }
    let rho = autocorrelation(series, max_lag)?;
    let pacf = durbin_levinson(&rho);
    Ok(AcfPacf { lags: (1..=max_lag).collect(), acf: rho[1..].to_vec(), pacf, n: series.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCurve {
    pub lags: Vec<usize>,
    pub rmse: Vec<f64>,
    pub r2: Vec<f64>,
    /// Day pairs averaged per lag.
    pub n_pairs: Vec<usize>,
}

/// Image-wise RMSE and R² between each day t and day t−ℓ (by calendar
/// date), averaged over all available pairs. R² uses the day-t image mean
/// as reference; a day-t image with zero spatial variance contributes R² = 1
/// when it equals day t−ℓ and is skipped otherwise.
pub fn lag_metrics(stack: &FieldStack, max_lag: usize, mask: Option<ArrayView2<'_, bool>>) -> Result<LagCurve> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be at least 1".into()));
    }
    if stack.n_days() < max_lag + 1 {
        return Err(Error::InvalidParameter(format!("{} days cannot support lags up to {max_lag}", stack.n_days())));
    }
    if mask.is_some_and(|m| m.dim() != stack.grid().shape()) {
        return Err(Error::ShapeMismatch("mask does not match grid".into()));
    }
    let usable = |y: usize, x: usize| mask.is_none_or(|m| m[[y, x]]) && stack.is_valid(y, x);

    let mut curve = LagCurve {
        lags: (1..=max_lag).collect(),
        rmse: Vec::with_capacity(max_lag),
        r2: Vec::with_capacity(max_lag),
        n_pairs: Vec::with_capacity(max_lag),
    };
    for lag in 1..=max_lag {
        let (mut rmse_sum, mut r2_sum, mut n_rmse, mut n_r2) = (0.0, 0.0, 0usize, 0usize);
        for (t, &date) in stack.dates().iter().enumerate() {
            let Some(prev) = date.checked_sub_days(Days::new(lag as u64)).and_then(|d| stack.date_index(d)) else {
                continue;
            };
            let (cur, old) = (stack.day(t), stack.day(prev));
            let mut pts = Vec::new();
            for ((y, x), &v) in cur.indexed_iter() {
                let w = old[[y, x]];
                if usable(y, x) && v.is_finite() && w.is_finite() {
                    pts.push((v, w));
                }
            }
            if pts.is_empty() {
                continue;
            }
            let n = pts.len() as f64;
            let sse: f64 = pts.iter().map(|(v, w)| (v - w) * (v - w)).sum();
            let mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let sst: f64 = pts.iter().map(|(v, _)| (v - mean) * (v - mean)).sum();
            rmse_sum += (sse / n).sqrt();
            n_rmse += 1;
            if sst > 0.0 {
                r2_sum += 1.0 - sse / sst;
                n_r2 += 1;
            } else if sse == 0.0 {
                r2_sum += 1.0;
                n_r2 += 1;
            }
        }
        if n_rmse == 0 {
            return Err(Error::InvalidParameter(format!("no day pairs exist at lag {lag}")));
        }
        curve.rmse.push(rmse_sum / n_rmse as f64);
        curve.r2.push(if n_r2 > 0 { r2_sum / n_r2 as f64 } else { f64::NAN });
        curve.n_pairs.push(n_rmse);
    }
    Ok(curve)
}
