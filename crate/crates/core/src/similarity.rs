//! Domain-shift diagnostic: 1-Wasserstein distance between jointly
//! log–min–max normalized fields.

use chrono::NaiveDate;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FieldStack, Space};

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_LOG_EPS: f64 = 1e-6;

/// Shared per-day bounds of the log values over the valid set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointNormBounds {
    pub min: f64,
    pub max: f64,
}

/// Normalizes two already-logged sample sets with shared bounds and clips
/// to [0, 1].
pub fn joint_normalize_logs(bx: &[f64], by: &[f64]) -> Result<(Vec<f64>, Vec<f64>, JointNormBounds)> {
    if bx.is_empty() || by.is_empty() {
        return Err(Error::Empty("no valid pixels to normalize".into()));
    }
    let (min, max) =
        bx.iter().chain(by).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return Err(Error::DegenerateBounds(format!("joint log bounds collapse to {min}")));
    }
    let span = max - min;
    let norm = |v: &f64| ((v - min) / span).clamp(0.0, 1.0);
    Ok((bx.iter().map(norm).collect(), by.iter().map(norm).collect(), JointNormBounds { min, max }))
}

/// Log-floors raw values of both fields at `eps` over the pixels valid in
/// both (and inside `mask`, when given), then normalizes with shared bounds.
pub fn joint_normalize(
    x_day: ArrayView2<'_, f64>,
    y_day: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (bx, by) = valid_logs(x_day, y_day, mask, Some(eps))?;
    let (nx, ny, _) = joint_normalize_logs(&bx, &by)?;
    Ok((nx, ny))
}

/// Collects values valid in both fields; `Some(eps)` applies the log floor.
fn valid_logs(
    x_day: ArrayView2<'_, f64>,
    y_day: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    log_eps: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_day.dim() != y_day.dim() || mask.is_some_and(|m| m.dim() != x_day.dim()) {
        return Err(Error::ShapeMismatch("fields and mask must share a shape".into()));
    }
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for ((idx, &x), &y) in x_day.indexed_iter().zip(y_day.iter()) {
        if mask.is_some_and(|m| !m[idx]) || !x.is_finite() || !y.is_finite() {
            continue;
        }
        match log_eps {
            Some(eps) => {
                bx.push(x.max(eps).log10());
                by.push(y.max(eps).log10());
            }
            None => {
                bx.push(x);
                by.push(y);
            }
        }
    }
    if bx.is_empty() {
        return Err(Error::Empty("mask leaves no valid pixels".into()));
    }
    Ok((bx, by))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact `∫|F_a − F_b| du` between two empirical distributions, by sweeping
/// the merged support. Sets may differ in size.
pub fn wasserstein_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein needs non-empty sample sets".into()));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Cumulative fraction of samples at or below each right bin edge `k/B`,
/// k = 1..=B, over equal-width bins on [0, 1].
fn cumulative_histogram(v: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &x in v {
        // bin k covers ((k-1)/B, k/B]; zero joins the first bin
        let k = ((x * bins as f64).ceil() as usize).clamp(1, bins);
        counts[k - 1] += 1;
    }
    let n = v.len() as f64;
    let mut acc = 0usize;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect()
}

/// Riemann-sum estimate `(1/B)·Σ_k |F̂_a(k/B) − F̂_b(k/B)|` for samples in [0, 1].
pub fn wasserstein_hist(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein needs non-empty sample sets".into()));
    }
    let fa = cumulative_histogram(a, bins);
    let fb = cumulative_histogram(b, bins);
    Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>() / bins as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDistance {
    pub date: NaiveDate,
    pub wd: f64,
    pub n_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdReport {
    pub bins: usize,
    pub per_day: Vec<DayDistance>,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
    /// Histogram distance over every day's normalized samples pooled together.
    pub pooled: f64,
}

/// Nearest-rank percentile: the `ceil(p/100·n)`-th smallest value.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of empty set".into()));
    }
    let s = sorted(values);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    Ok(s[rank.clamp(1, s.len()) - 1])
}

/// Per-day and pooled histogram distances between two aligned stacks.
/// Raw stacks are log-floored at [`DEFAULT_LOG_EPS`]; log10 stacks are used
/// as they are.
pub fn wd_report(x: &FieldStack, y: &FieldStack, mask: Option<ArrayView2<'_, bool>>, bins: usize) -> Result<WdReport> {
    if x.dates() != y.dates() {
        return Err(Error::DateMismatch("x and y stacks cover different dates".into()));
    }
    if x.grid().shape() != y.grid().shape() {
        return Err(Error::ShapeMismatch("x and y stacks live on different grids".into()));
    }
    if x.n_days() == 0 {
        return Err(Error::Empty("no days to compare".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let log_eps = |s: &FieldStack| match s.space() {
        Space::Raw => Ok(Some(DEFAULT_LOG_EPS)),
        Space::Log10 => Ok(None),
        Space::Standardized => Err(Error::WrongSpace { expected: "raw or log10", found: "standardized" }),
    };
    let (ex, ey) = (log_eps(x)?, log_eps(y)?);
    if ex != ey {
        return Err(Error::InvalidParameter("x and y must be in the same space".into()));
    }
    let combined = match (mask, x.valid(), y.valid()) {
        (None, None, None) => None,
        _ => {
            let shape = x.grid().shape();
            Some(ndarray::Array2::from_shape_fn(shape, |(i, j)| {
                mask.is_none_or(|m| m[[i, j]]) && x.is_valid(i, j) && y.is_valid(i, j)
            }))
        }
    };

    let per_day: Vec<(DayDistance, Vec<f64>, Vec<f64>)> = (0..x.n_days())
        .into_par_iter()
        .map(|t| {
            let (bx, by) = valid_logs(x.day(t), y.day(t), combined.as_ref().map(|m| m.view()), ex)?;
            let (nx, ny, _) = joint_normalize_logs(&bx, &by)?;
            let wd = wasserstein_hist(&nx, &ny, bins)?;
            Ok((DayDistance { date: x.dates()[t], wd, n_pixels: nx.len() }, nx, ny))
        })
        .collect::<Result<Vec<_>>>()?;

    let wds: Vec<f64> = per_day.iter().map(|d| d.0.wd).collect();
    let mean = wds.iter().sum::<f64>() / wds.len() as f64;
    let mut pooled_x = Vec::new();
    let mut pooled_y = Vec::new();
    for (_, nx, ny) in &per_day {
        pooled_x.extend_from_slice(nx);
        pooled_y.extend_from_slice(ny);
    }
    Ok(WdReport {
        bins,
        mean,
        p10: percentile_nearest_rank(&wds, 10.0)?,
        p90: percentile_nearest_rank(&wds, 90.0)?,
        pooled: wasserstein_hist(&pooled_x, &pooled_y, bins)?,
        per_day: per_day.into_iter().map(|d| d.0).collect(),
    })
}
