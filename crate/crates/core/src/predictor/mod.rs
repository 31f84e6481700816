//! Next-day fine-field predictors and the rollout harness.
//!
//! A predictor maps a [`PredictorInput`] for day `t+1` (same-day coarse
//! driver on the fine grid, static fields, calendar features and the last
//! `T_lag` fine fields) to a full fine-grid field. Trivial kinds answer
//! directly; patch kinds predict 16×16 patches at stride 2 and stitch them.

pub mod external;
pub mod ridge;
pub mod rollout;

use chrono::{Datelike, Days, NaiveDate};
use ndarray::{s, Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{extract_at, Patch, PatchSpec, Season, INFERENCE_STRIDE, PATCH_SIZE};
use crate::raster::{FieldStack, Grid};
use crate::stitch::{PlacedPatch, StitchAccumulator, DEFAULT_EPS, DEFAULT_HALO};

pub use external::ExternalCommand;
pub use ridge::{fit_ridge, fit_ridge_patch, training_patches, RidgeModel, TrainingPatch, DEFAULT_LAMBDA};
pub use rollout::{rollout, ContextMode, RolloutState};

pub const DEFAULT_T_LAG: usize = 5;
/// Knee width of the soft clamp as a fraction of the bound range.
pub const DEFAULT_KNEE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Persistence,
    CoarseDriver,
    RidgePatch,
    External,
}

impl PredictorKind {
    pub fn is_patch_based(self) -> bool {
        matches!(self, PredictorKind::RidgePatch | PredictorKind::External)
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistence" => Ok(Self::Persistence),
            "coarse_driver" => Ok(Self::CoarseDriver),
            "ridge_patch" => Ok(Self::RidgePatch),
            "external" => Ok(Self::External),
            other => Err(Error::InvalidParameter(format!("unknown predictor kind {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// calendar

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    pub season_index: u8,
    pub days_since_origin: f64,
    /// (year − first_year) / (last_year − first_year); 0 for a single year.
    pub normalized_year: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub origin: NaiveDate,
    pub first_year: i32,
    pub last_year: i32,
}

impl Calendar {
    pub fn new(origin: NaiveDate, first_year: i32, last_year: i32) -> Result<Self> {
        if last_year < first_year {
            return Err(Error::InvalidParameter(format!("year range {first_year}..{last_year} is reversed")));
        }
        Ok(Self { origin, first_year, last_year })
    }

    /// Origin at the first date, years spanning all dates.
    pub fn from_dates(dates: &[NaiveDate]) -> Result<Self> {
        let first = dates.iter().min().ok_or_else(|| Error::Empty("no dates".into()))?;
        let last = dates.iter().max().expect("non-empty");
        Self::new(*first, first.year(), last.year())
    }

    pub fn features(&self, date: NaiveDate) -> CalendarFeatures {
        let span = (self.last_year - self.first_year) as f64;
        CalendarFeatures {
            season_index: Season::of(date).index(),
            days_since_origin: (date - self.origin).num_days() as f64,
            normalized_year: if span > 0.0 { (date.year() - self.first_year) as f64 / span } else { 0.0 },
        }
    }
}

// ---------------------------------------------------------------------------
// inputs

/// Pixel-aligned static channels on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticChannels {
    pub elevation: Array2<f64>,
    pub lat: Array2<f64>,
    pub lon: Array2<f64>,
}

impl StaticChannels {
    pub fn new(elevation: Array2<f64>, grid: &Grid) -> Result<Self> {
        if elevation.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(format!("elevation {:?} vs grid {:?}", elevation.dim(), grid.shape())));
        }
        let (lat, lon) = (grid.lat(), grid.lon());
        Ok(Self {
            lat: Array2::from_shape_fn(grid.shape(), |(y, _)| lat[y]),
            lon: Array2::from_shape_fn(grid.shape(), |(_, x)| lon[x]),
            elevation,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.elevation.dim()
    }
}

#[derive(Debug, Clone)]
pub struct PredictorInput<'a> {
    /// Day being predicted.
    pub date: NaiveDate,
    /// Same-day coarse field regridded to the fine grid.
    pub driver: ArrayView2<'a, f64>,
    pub statics: &'a StaticChannels,
    pub calendar: CalendarFeatures,
    /// Last `T_lag` fine fields, oldest first.
    pub context: Vec<ArrayView2<'a, f64>>,
    /// Regridded coarse fields on the same context days, oldest first.
    /// May be empty when the model does not use them.
    pub driver_context: Vec<ArrayView2<'a, f64>>,
}

/// Turns the fine-field context into feature channels.
pub trait ContextFeaturizer {
    fn names(&self, n_context: usize) -> Vec<String>;
    fn features(&self, context: &[ArrayView2<'_, f64>]) -> Vec<Array2<f64>>;
}

/// Raw lag fields, newest first: `context_1` is day t.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeaturizer;

impl ContextFeaturizer for IdentityFeaturizer {
    fn names(&self, n: usize) -> Vec<String> {
        (1..=n).map(|k| format!("context_{k}")).collect()
    }

    fn features(&self, context: &[ArrayView2<'_, f64>]) -> Vec<Array2<f64>> {
        context.iter().rev().map(|c| c.to_owned()).collect()
    }
}

pub const BASE_CHANNELS: [&str; 7] =
    ["driver", "elevation", "lat", "lon", "season", "days_since_origin", "normalized_year"];

/// Regridded driver fields for the `t_lag` days before `day`, oldest
/// first; empty unless every one of them is present.
pub(crate) fn driver_context(drivers: &FieldStack, day: NaiveDate, t_lag: usize) -> Vec<ArrayView2<'_, f64>> {
    let views: Option<Vec<_>> = (1..=t_lag as u64)
        .rev()
        .map(|back| drivers.date_index(day - Days::new(back)).map(|t| drivers.day(t)))
        .collect();
    views.unwrap_or_default()
}

impl<'a> PredictorInput<'a> {
    /// Input for `day` from aligned stacks: the `t_lag` previous fine days
    /// as context, plus driver context when all those driver days exist.
    pub fn from_stacks(
        fine: &'a FieldStack,
        drivers: &'a FieldStack,
        statics: &'a StaticChannels,
        calendar: &Calendar,
        day: NaiveDate,
        t_lag: usize,
    ) -> Result<Self> {
        let driver = drivers.date_index(day).ok_or_else(|| Error::DateMismatch(format!("no driver for {day}")))?;
        let context = (1..=t_lag as u64)
            .rev()
            .map(|back| {
                let d = day - Days::new(back);
                fine.date_index(d)
                    .map(|t| fine.day(t))
                    .ok_or_else(|| Error::DateMismatch(format!("context day {d} missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            date: day,
            driver: drivers.day(driver),
            statics,
            calendar: calendar.features(day),
            context,
            driver_context: driver_context(drivers, day, t_lag),
        })
    }
}

impl PredictorInput<'_> {
    fn check_shapes(&self) -> Result<()> {
        let shape = self.driver.dim();
        let bad = self.statics.shape() != shape
            || self.context.iter().any(|c| c.dim() != shape)
            || self.driver_context.iter().any(|c| c.dim() != shape);
        if bad {
            return Err(Error::ShapeMismatch("input channels are not pixel-aligned".into()));
        }
        if !self.driver_context.is_empty() && self.driver_context.len() != self.context.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} driver context fields for {} context fields",
                self.driver_context.len(),
                self.context.len()
            )));
        }
        Ok(())
    }

    /// Stacks every available channel as (C, H, W) with its names.
    pub fn assemble(&self, featurizer: &dyn ContextFeaturizer) -> Result<(Vec<String>, Array3<f64>)> {
        self.check_shapes()?;
        let (h, w) = self.driver.dim();
        let mut names: Vec<String> = BASE_CHANNELS.iter().map(|s| s.to_string()).collect();
        let mut planes: Vec<Array2<f64>> = vec![
            self.driver.to_owned(),
            self.statics.elevation.clone(),
            self.statics.lat.clone(),
            self.statics.lon.clone(),
            Array2::from_elem((h, w), self.calendar.season_index as f64),
            Array2::from_elem((h, w), self.calendar.days_since_origin),
            Array2::from_elem((h, w), self.calendar.normalized_year),
        ];
        names.extend(featurizer.names(self.context.len()));
        planes.extend(featurizer.features(&self.context));
        for (k, c) in self.driver_context.iter().rev().enumerate() {
            names.push(format!("driver_context_{}", k + 1));
            planes.push(c.to_owned());
        }
        let mut out = Array3::zeros((planes.len(), h, w));
        for (c, p) in planes.iter().enumerate() {
            out.slice_mut(s![c, .., ..]).assign(p);
        }
        Ok((names, out))
    }
}

// ---------------------------------------------------------------------------
// output clamp

/// Sigmoid-shaped squashing into `(lo, hi)`: identity on the inner band,
/// tanh roll-off inside a knee of width `knee · (hi − lo)` at each end.
/// Every output lies strictly inside the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftClamp {
    pub lo: f64,
    pub hi: f64,
    pub knee: f64,
}

impl SoftClamp {
    pub fn new(lo: f64, hi: f64, knee: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::DegenerateBounds(format!("clamp bounds [{lo}, {hi}]")));
        }
        if !(knee > 0.0 && knee <= 0.5) {
            return Err(Error::InvalidParameter(format!("clamp knee {knee} must lie in (0, 0.5]")));
        }
        Ok(Self { lo, hi, knee })
    }

    pub fn apply(&self, v: f64) -> f64 {
        let k = self.knee * (self.hi - self.lo);
        let (a, b) = (self.lo + k, self.hi - k);
        let out = if v > b {
            b + k * ((v - b) / k).tanh()
        } else if v < a {
            a - k * ((a - v) / k).tanh()
        } else if v.is_nan() {
            return v;
        } else {
            v
        };
        out.clamp(self.lo.next_up(), self.hi.next_down())
    }
}

// ---------------------------------------------------------------------------
// predictor spec

/// Anything that maps input patches to predicted single-channel patches.
pub trait PatchModel: Sync {
    fn predict_patches(&self, day: NaiveDate, image: (usize, usize), patches: &[Patch]) -> Result<Vec<Array2<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub t_lag: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub halo: usize,
    pub eps: f64,
    pub clamp: Option<SoftClamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<RidgeModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalCommand>,
}

impl PredictorSpec {
    fn base(kind: PredictorKind, t_lag: usize) -> Self {
        Self {
            kind,
            t_lag,
            patch_size: PATCH_SIZE,
            stride: INFERENCE_STRIDE,
            halo: DEFAULT_HALO,
            eps: DEFAULT_EPS,
            clamp: None,
            ridge: None,
            external: None,
        }
    }

    pub fn persistence(t_lag: usize) -> Self {
        Self::base(PredictorKind::Persistence, t_lag)
    }

    pub fn coarse_driver(t_lag: usize) -> Self {
        Self::base(PredictorKind::CoarseDriver, t_lag)
    }

    pub fn ridge(model: RidgeModel, t_lag: usize, clamp: Option<SoftClamp>) -> Self {
        Self { ridge: Some(model), clamp, ..Self::base(PredictorKind::RidgePatch, t_lag) }
    }

    pub fn external(command: ExternalCommand, t_lag: usize, clamp: Option<SoftClamp>) -> Self {
        Self { external: Some(command), clamp, ..Self::base(PredictorKind::External, t_lag) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_lag == 0 {
            return Err(Error::InvalidParameter("t_lag must be at least 1".into()));
        }
        if self.kind.is_patch_based() {
            PatchSpec::new(self.patch_size, self.patch_size, self.stride, self.halo)?;
            if !(self.eps > 0.0) {
                return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
            }
        }
        match self.kind {
            PredictorKind::RidgePatch if self.ridge.is_none() => {
                Err(Error::InvalidParameter("ridge_patch spec carries no fitted model".into()))
            }
            PredictorKind::External if self.external.is_none() => {
                Err(Error::InvalidParameter("external spec carries no command".into()))
            }
            _ => Ok(()),
        }
    }

    fn model(&self) -> Result<&dyn PatchModel> {
        match self.kind {
            PredictorKind::RidgePatch => Ok(self.ridge.as_ref().expect("validated")),
            PredictorKind::External => Ok(self.external.as_ref().expect("validated")),
            _ => Err(Error::InvalidParameter(format!("{:?} is not patch based", self.kind))),
        }
    }
}

/// Predicts the fine field for `input.date`.
pub fn predict_day(input: &PredictorInput<'_>, spec: &PredictorSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    input.check_shapes()?;
    match spec.kind {
        PredictorKind::Persistence => input
            .context
            .last()
            .map(|c| c.to_owned())
            .ok_or_else(|| Error::MissingChannel("persistence needs at least one context field".into())),
        PredictorKind::CoarseDriver => Ok(input.driver.to_owned()),
        PredictorKind::RidgePatch | PredictorKind::External => {
            if input.context.len() != spec.t_lag {
                return Err(Error::MissingChannel(format!(
                    "{} context fields supplied, spec needs {}",
                    input.context.len(),
                    spec.t_lag
                )));
            }
            predict_day_with(input, spec, spec.model()?)
        }
    }
}

/// Patch prediction plus stitching with an arbitrary patch model, using
/// the patch geometry and clamp of `spec`.
pub fn predict_day_with(
    input: &PredictorInput<'_>,
    spec: &PredictorSpec,
    model: &dyn PatchModel,
) -> Result<Array2<f64>> {
    let (names, channels) = input.assemble(&IdentityFeaturizer)?;
    let (h, w) = input.driver.dim();
    let pspec = PatchSpec::new(spec.patch_size, spec.patch_size, spec.stride, spec.halo)?;
    let origins = pspec.covering_origins(h, w)?;
    let patches = extract_at(channels.view(), &names, input.date, &pspec, &origins, None)?;
    let mut preds = model.predict_patches(input.date, (h, w), &patches)?;
    if preds.len() != patches.len() {
        return Err(Error::ShapeMismatch(format!(
            "model returned {} patches for {} inputs",
            preds.len(),
            patches.len()
        )));
    }
    if let Some(c) = spec.clamp {
        for p in &mut preds {
            p.mapv_inplace(|v| c.apply(v));
        }
    }
    let placed: Vec<PlacedPatch<'_>> =
        patches.iter().zip(&preds).map(|(p, v)| PlacedPatch { y0: p.y0, x0: p.x0, values: v.view() }).collect();
    let mut out = stitch_with_fallback((h, w), (spec.patch_size, spec.patch_size), &placed, spec.halo, spec.eps)?;
    if let Some(c) = spec.clamp {
        // weighted averages can drift by an ulp past the extreme inputs
        out.mapv_inplace(|v| v.clamp(c.lo.next_up(), c.hi.next_down()));
    }
    Ok(out)
}

/// Tapered stitch; pixels the taper leaves uncovered (the image border
/// ring, where the Hann endpoints vanish) get the plain mean of every
/// patch value that lands on them.
pub fn stitch_with_fallback(
    image: (usize, usize),
    patch: (usize, usize),
    placed: &[PlacedPatch<'_>],
    halo: usize,
    eps: f64,
) -> Result<Array2<f64>> {
    let mut acc = StitchAccumulator::new(image, patch, halo, eps)?;
    acc.accumulate_par(placed)?;
    let stitched = acc.finalize();
    if stitched.all_covered() {
        return Ok(stitched.values);
    }
    let mut sum = Array2::<f64>::zeros(image);
    let mut count = Array2::<f64>::zeros(image);
    for p in placed {
        let region = s![p.y0..p.y0 + patch.0, p.x0..p.x0 + patch.1];
        Zip::from(sum.slice_mut(region)).and(count.slice_mut(region)).and(&p.values).for_each(|s, n, &v| {
            *s += v;
            *n += 1.0;
        });
    }
    let mut out = stitched.values;
    for ((idx, v), &cov) in out.indexed_iter_mut().zip(stitched.covered.iter()) {
        if !cov {
            if count[idx] == 0.0 {
                return Err(Error::ShapeMismatch(format!("pixel {idx:?} is not inside any patch")));
            }
            *v = sum[idx] / count[idx];
        }
    }
    Ok(out)
}
