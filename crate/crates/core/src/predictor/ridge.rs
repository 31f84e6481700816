//! Per-pixel linear map shared across patches, fitted in closed form.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    Calendar, IdentityFeaturizer, PatchModel, PredictorInput, PredictorSpec, SoftClamp, StaticChannels, DEFAULT_KNEE,
};
use crate::error::{Error, Result};
use crate::pipeline::{extract_at, Patch, PatchSpec};
use crate::raster::FieldStack;

/// Eigenvalue ratio of the channel correlation matrix below which an
/// unpenalized system is reported as singular.
pub const SINGULAR_RATIO: f64 = 1e-10;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPatch {
    pub inputs: Patch,
    pub target: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Channels with a coefficient, in coefficient order.
    pub channels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Channels without variance in the training data; ignored.
    pub dropped: Vec<String>,
    pub n_samples: usize,
}

#[derive(Clone)]
struct Moments {
    n: usize,
    gram: DMatrix<f64>,
    xy: DVector<f64>,
    sum_x: DVector<f64>,
    sum_y: f64,
}

impl Moments {
    fn zeros(c: usize) -> Self {
        Self { n: 0, gram: DMatrix::zeros(c, c), xy: DVector::zeros(c), sum_x: DVector::zeros(c), sum_y: 0.0 }
    }

    fn merge(mut self, o: &Moments) -> Self {
        self.n += o.n;
        self.gram += &o.gram;
        self.xy += &o.xy;
        self.sum_x += &o.sum_x;
        self.sum_y += o.sum_y;
        self
    }
}

/// Accumulates moments of (x − shift, y − shift_y) over finite pixels in
/// fixed chunks merged in order, so the result does not depend on the
/// thread count.
fn moments(samples: &[TrainingPatch], shift: &[f64], shift_y: f64) -> Moments {
    let c = shift.len();
    let partials: Vec<Moments> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut m = Moments::zeros(c);
            let mut x = vec![0.0; c];
            for s in chunk {
                let v = &s.inputs.values;
                for ((i, j), &y) in s.target.indexed_iter() {
                    if !y.is_finite() {
                        continue;
                    }
                    let mut ok = true;
                    for k in 0..c {
                        x[k] = v[[k, i, j]] - shift[k];
                        ok &= x[k].is_finite();
                    }
                    if !ok {
                        continue;
                    }
                    let y = y - shift_y;
                    m.n += 1;
                    m.sum_y += y;
                    for a in 0..c {
                        m.sum_x[a] += x[a];
                        m.xy[a] += x[a] * y;
                        for b in a..c {
                            m.gram[(a, b)] += x[a] * x[b];
                        }
                    }
                }
            }
            m
        })
        .collect();
    let mut total = partials.iter().fold(Moments::zeros(c), |acc, m| acc.merge(m));
    for a in 0..c {
        for b in 0..a {
            total.gram[(a, b)] = total.gram[(b, a)];
        }
    }
    total
}

/// Minimizes `(1/n) Σ (y − b − xᵀβ)² + λ‖β‖²` over all finite training
/// pixels; the intercept is not penalized. Channels that are constant over
/// the training set are dropped.
pub fn fit_ridge(samples: &[TrainingPatch], lambda: f64) -> Result<RidgeModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let first = samples.first().ok_or_else(|| Error::Empty("no training patches".into()))?;
    let names = first.inputs.channels.clone();
    for s in samples {
        if *s.inputs.channels != *names {
            return Err(Error::ShapeMismatch("training patches disagree on channels".into()));
        }
        if s.target.dim() != (s.inputs.height(), s.inputs.width()) {
            return Err(Error::ShapeMismatch("target and input patch sizes differ".into()));
        }
    }
    let c = names.len();
    if samples.len() < c {
        return Err(Error::InvalidParameter(format!("{} training patches for {c} channels", samples.len())));
    }

    // two passes: raw means, then moments about the means
    let raw = moments(samples, &vec![0.0; c], 0.0);
    if raw.n == 0 {
        return Err(Error::Empty("no finite training pixels".into()));
    }
    let n = raw.n as f64;
    let mean_x: Vec<f64> = raw.sum_x.iter().map(|s| s / n).collect();
    let mean_y = raw.sum_y / n;
    let m = moments(samples, &mean_x, mean_y);
    // remove the residual mean left by rounding in the first pass
    let rx: Vec<f64> = m.sum_x.iter().map(|s| s / n).collect();
    let ry = m.sum_y / n;
    let cov = |a: usize, b: usize| m.gram[(a, b)] / n - rx[a] * rx[b];

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for k in 0..c {
        let scale = 1.0 + mean_x[k] * mean_x[k];
        if cov(k, k) > 1e-12 * scale {
            kept.push(k);
        } else {
            dropped.push(names[k].clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::ZeroVariance("every input channel is constant".into()));
    }
    let p = kept.len();
    let a = DMatrix::from_fn(p, p, |i, j| cov(kept[i], kept[j]));
    let b = DVector::from_fn(p, |i, _| m.xy[kept[i]] / n - rx[kept[i]] * ry);

    if lambda == 0.0 {
        let d: Vec<f64> = (0..p).map(|i| a[(i, i)].sqrt()).collect();
        let corr = DMatrix::from_fn(p, p, |i, j| a[(i, j)] / (d[i] * d[j]));
        let eig = SymmetricEigen::new(corr).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if !(min / max > SINGULAR_RATIO) {
            return Err(Error::Singular(format!(
                "channel correlation eigenvalue ratio {:.3e}; use lambda > 0",
                min / max
            )));
        }
    }
    let mut system = a;
    for i in 0..p {
        system[(i, i)] += lambda;
    }
    let beta = system
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite; use lambda > 0".into()))?
        .solve(&b);

    let intercept = mean_y + ry - kept.iter().zip(beta.iter()).map(|(&k, bk)| bk * (mean_x[k] + rx[k])).sum::<f64>();
    Ok(RidgeModel {
        channels: kept.iter().map(|&k| names[k].clone()).collect(),
        coefficients: beta.iter().copied().collect(),
        intercept,
        lambda,
        dropped,
        n_samples: raw.n,
    })
}

/// Training-lattice patches (16×16, stride 8) of every day in `days`,
/// paired with the fine target under each patch.
pub fn training_patches(
    fine: &FieldStack,
    drivers: &FieldStack,
    statics: &StaticChannels,
    calendar: &Calendar,
    days: &[NaiveDate],
    t_lag: usize,
) -> Result<Vec<TrainingPatch>> {
    let spec = PatchSpec::training();
    let (h, w) = fine.grid().shape();
    let origins = spec.origins(h, w)?;
    let mut out = Vec::new();
    for &day in days {
        let input = PredictorInput::from_stacks(fine, drivers, statics, calendar, day, t_lag)?;
        let (names, planes) = input.assemble(&IdentityFeaturizer)?;
        let target = fine.day(fine.date_index(day).ok_or_else(|| Error::DateMismatch(format!("no target for {day}")))?);
        for p in extract_at(planes.view(), &names, day, &spec, &origins, None)? {
            let t = target.slice(ndarray::s![p.y0..p.y0 + spec.height, p.x0..p.x0 + spec.width]).to_owned();
            out.push(TrainingPatch { inputs: p, target: t });
        }
    }
    Ok(out)
}

/// Fits the ridge map and wraps it in a `ridge_patch` spec whose clamp
/// bounds are the min/max of the training targets.
pub fn fit_ridge_patch(samples: &[TrainingPatch], lambda: f64, t_lag: usize) -> Result<PredictorSpec> {
    let model = fit_ridge(samples, lambda)?;
    let (lo, hi) = samples
        .iter()
        .flat_map(|s| s.target.iter())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let clamp = SoftClamp::new(lo, hi, DEFAULT_KNEE)?;
    let spec = PredictorSpec::ridge(model, t_lag, Some(clamp));
    spec.validate()?;
    Ok(spec)
}

impl RidgeModel {
    fn channel_index(&self, names: &[String]) -> Result<Vec<usize>> {
        self.channels
            .iter()
            .map(|c| names.iter().position(|n| n == c).ok_or_else(|| Error::MissingChannel(c.clone())))
            .collect()
    }

    pub fn predict_patch(&self, patch: &Patch) -> Result<Array2<f64>> {
        let idx = self.channel_index(&patch.channels)?;
        Ok(self.apply(patch, &idx))
    }

    fn apply(&self, patch: &Patch, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::from_elem((patch.height(), patch.width()), self.intercept);
        for (&k, &b) in idx.iter().zip(&self.coefficients) {
            out.scaled_add(b, &patch.values.index_axis(ndarray::Axis(0), k));
        }
        out
    }
}

impl PatchModel for RidgeModel {
    fn predict_patches(&self, _day: NaiveDate, _image: (usize, usize), patches: &[Patch]) -> Result<Vec<Array2<f64>>> {
        let Some(first) = patches.first() else {
            return Ok(Vec::new());
        };
        let idx = self.channel_index(&first.channels)?;
        patches
            .par_iter()
            .map(|p| {
                if *p.channels != *first.channels {
                    return Err(Error::ShapeMismatch("patches disagree on channels".into()));
                }
                Ok(self.apply(p, &idx))
            })
            .collect()
    }
}
