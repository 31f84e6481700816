//! Empirical semivariograms from sampled pixel pairs and spherical-model fits.

use std::collections::HashSet;

use ndarray::ArrayView2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FieldStack, Grid};

/// Mean Earth radius (IUGG), km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const DEFAULT_PAIRS: usize = 30_000;
pub const DEFAULT_MAX_KM: f64 = 600.0;
pub const DEFAULT_DISTANCE_BINS: usize = 24;

/// Candidate pair sets up to this size are enumerated outright; larger
/// sets are sampled by rejection.
const ENUMERATION_LIMIT: usize = 4_000_000;
const REJECTION_BUDGET: usize = 200;

const GRID_POINTS: usize = 64;
const GOLDEN_ITERATIONS: usize = 200;

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPair {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<PixelPair>,
    pub seed: u64,
    pub max_km: f64,
    /// True when every admissible pair was taken.
    pub exhaustive: bool,
}

/// Draws up to `n` distinct valid pixel pairs with `0 < d ≤ max_km`,
/// uniformly and without replacement. If fewer admissible pairs exist, all
/// of them are returned.
pub fn sample_pairs(
    grid: &Grid,
    mask: Option<ArrayView2<'_, bool>>,
    n: usize,
    max_km: f64,
    seed: u64,
) -> Result<PairSample> {
    if !(max_km > 0.0) {
        return Err(Error::InvalidParameter(format!("max_km must be > 0, got {max_km}")));
    }
    if mask.is_some_and(|m| m.dim() != grid.shape()) {
        return Err(Error::ShapeMismatch("mask does not match grid".into()));
    }
    let (ny, nx) = grid.shape();
    let pixels: Vec<(usize, usize)> =
        (0..ny).flat_map(|i| (0..nx).map(move |j| (i, j))).filter(|&p| mask.is_none_or(|m| m[p])).collect();
    if pixels.len() < 2 {
        return Err(Error::Empty(format!("need at least 2 valid pixels, found {}", pixels.len())));
    }
    let dist = |p: usize, q: usize| {
        let (a, b) = (pixels[p], pixels[q]);
        haversine_km(grid.lat()[a.0], grid.lon()[a.1], grid.lat()[b.0], grid.lon()[b.1])
    };
    let pair = |p: usize, q: usize, d: f64| PixelPair { a: pixels[p], b: pixels[q], distance_km: d };
    let np = pixels.len();
    let total = np * (np - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if total <= ENUMERATION_LIMIT {
        let mut all = Vec::new();
        for p in 0..np {
            for q in p + 1..np {
                let d = dist(p, q);
                if d > 0.0 && d <= max_km {
                    all.push(pair(p, q, d));
                }
            }
        }
        if all.len() <= n {
            return Ok(PairSample { pairs: all, seed, max_km, exhaustive: true });
        }
        let mut chosen = index::sample(&mut rng, all.len(), n).into_vec();
        chosen.sort_unstable();
        return Ok(PairSample { pairs: chosen.into_iter().map(|i| all[i]).collect(), seed, max_km, exhaustive: false });
    }

    let mut seen = HashSet::with_capacity(n);
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pairs.len() < n && attempts < REJECTION_BUDGET * n {
        attempts += 1;
        let p = rng.gen_range(0..np);
        let q = rng.gen_range(0..np);
        if p == q {
            continue;
        }
        let key = (p.min(q), p.max(q));
        if seen.contains(&key) {
            continue;
        }
        let d = dist(key.0, key.1);
        if d > 0.0 && d <= max_km {
            seen.insert(key);
            pairs.push(pair(key.0, key.1, d));
        }
    }
    Ok(PairSample { pairs, seed, max_km, exhaustive: false })
}

/// Equal-width distance bins over (0, max]. Bin k holds `(e_k, e_{k+1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBins {
    edges: Vec<f64>,
}

impl DistanceBins {
    pub fn equal_width(n_bins: usize, max_km: f64) -> Result<Self> {
        if n_bins == 0 || !(max_km > 0.0) {
            return Err(Error::InvalidParameter(format!("bad bin spec: {n_bins} bins up to {max_km} km")));
        }
        let w = max_km / n_bins as f64;
        let mut edges: Vec<f64> = (0..=n_bins).map(|k| k as f64 * w).collect();
        edges[n_bins] = max_km;
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_of(&self, d: f64) -> Option<usize> {
        let max = *self.edges.last().expect("non-empty");
        if !(d > 0.0) || d > max {
            return None;
        }
        let k = self.edges.partition_point(|&e| e < d);
        Some(k.clamp(1, self.len()) - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramEstimate {
    pub bin_edges: Vec<f64>,
    pub bin_centers: Vec<f64>,
    /// Semivariance per bin; 0 for empty bins (see `pair_counts`).
    pub gamma: Vec<f64>,
    pub pair_counts: Vec<usize>,
}

impl VariogramEstimate {
    pub fn is_empty_bin(&self, k: usize) -> bool {
        self.pair_counts[k] == 0
    }

    pub fn n_nonempty(&self) -> usize {
        self.pair_counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Per bin, the mean of `½(z_p − z_q)²` over the sampled pairs in that bin.
pub fn empirical_variogram(
    field: ArrayView2<'_, f64>,
    pairs: &PairSample,
    bins: &DistanceBins,
) -> Result<VariogramEstimate> {
    let mut sums = vec![0.0; bins.len()];
    let mut counts = vec![0usize; bins.len()];
    for p in &pairs.pairs {
        let (za, zb) = match (field.get(p.a), field.get(p.b)) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::ShapeMismatch(format!("pair {:?}-{:?} outside field", p.a, p.b))),
        };
        if !za.is_finite() || !zb.is_finite() {
            return Err(Error::InvalidParameter(format!("pair {:?}-{:?} references a non-finite pixel", p.a, p.b)));
        }
        if let Some(k) = bins.bin_of(p.distance_km) {
            sums[k] += 0.5 * (za - zb) * (za - zb);
            counts[k] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Empty("every distance bin is empty".into()));
    }
    let gamma = sums.iter().zip(&counts).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(VariogramEstimate { bin_edges: bins.edges().to_vec(), bin_centers: bins.centers(), gamma, pair_counts: counts })
}

/// Plain mean of daily curves per bin (over the days where the bin is
/// populated); pair counts are summed.
pub fn mean_variogram(days: &[VariogramEstimate]) -> Result<VariogramEstimate> {
    let first = days.first().ok_or_else(|| Error::Empty("no daily variograms".into()))?;
    if days.iter().any(|d| d.bin_edges != first.bin_edges) {
        return Err(Error::ShapeMismatch("daily variograms use different bins".into()));
    }
    let nb = first.gamma.len();
    let mut gamma = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for k in 0..nb {
        let populated: Vec<f64> = days.iter().filter(|d| d.pair_counts[k] > 0).map(|d| d.gamma[k]).collect();
        if !populated.is_empty() {
            gamma[k] = populated.iter().sum::<f64>() / populated.len() as f64;
        }
        counts[k] = days.iter().map(|d| d.pair_counts[k]).sum();
    }
    Ok(VariogramEstimate {
        bin_edges: first.bin_edges.clone(),
        bin_centers: first.bin_centers.clone(),
        gamma,
        pair_counts: counts,
    })
}

/// Daily variograms of every day in `stack`, then their mean.
pub fn stack_variogram(stack: &FieldStack, pairs: &PairSample, bins: &DistanceBins) -> Result<VariogramEstimate> {
    let days = (0..stack.n_days())
        .into_par_iter()
        .map(|t| empirical_variogram(stack.day(t), pairs, bins))
        .collect::<Result<Vec<_>>>()?;
    mean_variogram(&days)
}

/// Unit spherical structure: `1.5(h/a) − 0.5(h/a)³` below the range, 1 beyond.
pub fn spherical_shape(h: f64, range: f64) -> f64 {
    if h >= range {
        1.0
    } else {
        let r = h / range;
        1.5 * r - 0.5 * r * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalFit {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_km: f64,
    /// Pair-count-weighted RMS residual over non-empty bins.
    pub rmse: f64,
    /// Set when the curve is flat and the range cannot be identified.
    pub pure_nugget: bool,
}

impl SphericalFit {
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    pub fn model(&self, h: f64) -> f64 {
        self.nugget + self.partial_sill * spherical_shape(h, self.range_km)
    }
}

struct Bin {
    h: f64,
    gamma: f64,
    w: f64,
}

/// Weighted NNLS for (nugget, partial sill) at a fixed range. Returns
/// (nugget, partial_sill, weighted SSE).
fn fit_at_range(bins: &[Bin], range: f64) -> (f64, f64, f64) {
    let sse = |c0: f64, c: f64| {
        bins.iter()
            .map(|b| {
                let r = c0 + c * spherical_shape(b.h, range) - b.gamma;
                b.w * r * r
            })
            .sum::<f64>()
    };
    let (mut sw, mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let g = spherical_shape(b.h, range);
        sw += b.w;
        sg += b.w * g;
        sgg += b.w * g * g;
        sy += b.w * b.gamma;
        sgy += b.w * g * b.gamma;
    }
    let mut candidates = Vec::with_capacity(4);
    let det = sw * sgg - sg * sg;
    if det > 1e-12 * sw * sgg {
        let c0 = (sgg * sy - sg * sgy) / det;
        let c = (sw * sgy - sg * sy) / det;
        if c0 >= 0.0 && c >= 0.0 {
            candidates.push((c0, c));
        }
    }
    candidates.push(((sy / sw).max(0.0), 0.0));
    if sgg > 0.0 {
        candidates.push((0.0, (sgy / sgg).max(0.0)));
    }
    candidates.into_iter().map(|(c0, c)| (c0, c, sse(c0, c))).fold((0.0, 0.0, f64::INFINITY), |best, cand| {
        if cand.2 < best.2 {
            cand
        } else {
            best
        }
    })
}

/// Fits `c0 + c·sph(h; a)` by pair-count-weighted least squares with
/// `c0, c ≥ 0`: a 64-point log-spaced scan over the range, then a
/// golden-section refinement around the best scan point.
pub fn fit_spherical(vg: &VariogramEstimate) -> Result<SphericalFit> {
    let mut bins: Vec<Bin> = vg
        .bin_centers
        .iter()
        .zip(&vg.gamma)
        .zip(&vg.pair_counts)
        .filter(|(_, &c)| c > 0)
        .map(|((&h, &gamma), &c)| Bin { h, gamma, w: c as f64 })
        .collect();
    if bins.len() < 3 {
        return Err(Error::Empty(format!("need at least 3 non-empty bins, got {}", bins.len())));
    }
    bins.sort_by(|a, b| a.h.total_cmp(&b.h));
    let total_w: f64 = bins.iter().map(|b| b.w).sum();
    let rmse_of = |sse: f64| (sse / total_w).sqrt();
    let max_distance = vg.bin_edges.last().copied().unwrap_or(bins[bins.len() - 1].h);

    let (gmin, gmax) =
        bins.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.gamma), hi.max(b.gamma)));
    if gmax - gmin <= 1e-12 * gmax.abs().max(f64::MIN_POSITIVE) {
        let c0 = bins.iter().map(|b| b.w * b.gamma).sum::<f64>() / total_w;
        return Ok(SphericalFit {
            nugget: c0,
            partial_sill: 0.0,
            range_km: max_distance,
            rmse: 0.0,
            pure_nugget: true,
        });
    }

    let lo = bins[0].h;
    let hi = max_distance.max(lo * (1.0 + 1e-9));
    let ranges: Vec<f64> = (0..GRID_POINTS).map(|k| lo * (hi / lo).powf(k as f64 / (GRID_POINTS - 1) as f64)).collect();
    let scores: Vec<f64> = ranges.iter().map(|&a| fit_at_range(&bins, a).2).collect();
    let best = scores.iter().enumerate().fold(0, |bi, (i, &s)| if s < scores[bi] { i } else { bi });

    let mut left = ranges[best.saturating_sub(1)];
    let mut right = ranges[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = right - inv_phi * (right - left);
    let mut x2 = left + inv_phi * (right - left);
    let mut f1 = fit_at_range(&bins, x1).2;
    let mut f2 = fit_at_range(&bins, x2).2;
    for _ in 0..GOLDEN_ITERATIONS {
        if right - left <= 1e-12 * right {
            break;
        }
        if f1 <= f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - inv_phi * (right - left);
            f1 = fit_at_range(&bins, x1).2;
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + inv_phi * (right - left);
            f2 = fit_at_range(&bins, x2).2;
        }
    }
    let refined = 0.5 * (left + right);
    let (a, (c0, c, sse)) = [ranges[best], refined]
        .into_iter()
        .map(|a| (a, fit_at_range(&bins, a)))
        .fold((0.0, (0.0, 0.0, f64::INFINITY)), |acc, cand| if cand.1 .2 < acc.1 .2 { cand } else { acc });
    Ok(SphericalFit { nugget: c0, partial_sill: c, range_km: a, rmse: rmse_of(sse), pure_nugget: false })
}
