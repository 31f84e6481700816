//! A small synthetic coarse/fine world and the end-to-end demo run on it.
//!
//! The coarse field is a seasonal mean plus a static pattern plus an AR(1)
//! anomaly built from smooth random waves. The fine truth is an affine map
//! of the regridded coarse field and elevation plus AR(1) fine-scale noise,
//! all in log10 space; both are stored as raw positive values.

use std::f64::consts::PI;

use chrono::{Datelike, Days, NaiveDate};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    acf_pacf, eval_metrics, fit_spherical, lag_metrics, regional_mean_series, sample_pairs, stack_variogram,
    DistanceBins, EvalReport, LagCurve, MetricsReport, SphericalFit,
};
use crate::error::{Error, Result};
use crate::pipeline::{build_season_windows, temporal_split, Season, SplitRatios};
use crate::predictor::{
    fit_ridge_patch, predict_day, rollout, training_patches, Calendar, ContextMode, PredictorInput, PredictorSpec,
    RolloutState, StaticChannels,
};
use crate::raster::{
    fit_standardizer_pooled, standardize, to_log10, Direction, FieldStack, Grid, Space, StandardizationParams,
    DEFAULT_FLOOR_EPS,
};
use crate::regrid::{block_average, RegridPlan};
use crate::similarity::{wd_report, DEFAULT_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Fine grid rows × columns at 0.0625°.
    pub fine_rows: usize,
    pub fine_cols: usize,
    /// Fine log10 field = slope · coarse + elevation_coef · elevation_km + offset + noise.
    pub slope: f64,
    pub elevation_coef: f64,
    pub offset: f64,
    pub driver_rho: f64,
    pub driver_std: f64,
    pub noise_rho: f64,
    pub noise_std: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 20240521,
            start: NaiveDate::from_ymd_opt(2005, 4, 17).expect("date"),
            end: NaiveDate::from_ymd_opt(2007, 9, 10).expect("date"),
            fine_rows: 48,
            fine_cols: 64,
            slope: 1.2,
            elevation_coef: -0.25,
            offset: 0.1,
            driver_rho: 0.8,
            driver_std: 0.3,
            noise_rho: 0.9,
            noise_std: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    /// Raw coarse field on the 0.5° × 0.625° grid.
    pub coarse: FieldStack,
    /// Raw fine truth on the 0.0625° grid.
    pub fine: FieldStack,
    /// Elevation in metres on a 1/128° grid, 8 × 8 samples per fine cell.
    pub elevation: Array2<f64>,
    pub elevation_grid: Grid,
}

const FINE_STEP: f64 = 0.0625;
const NATIVE_PER_FINE: usize = 8;
const LAT_TOP: f64 = 34.0;
const LON_LEFT: f64 = 40.0;

/// Sum of random plane waves; variance `std²` in expectation.
struct Waves {
    k: Vec<(f64, f64)>,
    phase: Vec<f64>,
    amp: f64,
}

impl Waves {
    fn new(rng: &mut ChaCha8Rng, n: usize, wl_min: f64, wl_max: f64, std: f64) -> Self {
        let mut k = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for _ in 0..n {
            let wl = (wl_min.ln() + rng.gen::<f64>() * (wl_max / wl_min).ln()).exp();
            let dir = rng.gen::<f64>() * 2.0 * PI;
            k.push((dir.cos() / wl, dir.sin() / wl));
            phase.push(rng.gen::<f64>() * 2.0 * PI);
        }
        Self { k, phase, amp: std * (2.0 / n as f64).sqrt() }
    }

    fn eval(&self, lat: f64, lon: f64) -> f64 {
        self.k.iter().zip(&self.phase).map(|(&(kx, ky), &p)| (2.0 * PI * (kx * lon + ky * lat) + p).cos()).sum::<f64>()
            * self.amp
    }

    fn grid(&self, grid: &Grid) -> Array2<f64> {
        Array2::from_shape_fn(grid.shape(), |(y, x)| self.eval(grid.lat()[y], grid.lon()[x]))
    }
}

fn elevation_m(lat: f64, lon: f64) -> f64 {
    let bump = |la: f64, lo: f64, sla: f64, slo: f64| (-((lat - la).powi(2) / sla + (lon - lo).powi(2) / slo)).exp();
    700.0
        + 900.0 * bump(33.3, 41.0, 0.25, 0.4)
        + 600.0 * bump(31.7, 43.1, 0.15, 0.6)
        + 80.0 * (7.0 * lon).sin() * (9.0 * lat).cos()
}

pub fn fine_grid(cfg: &WorldConfig) -> Result<Grid> {
    Grid::regular(
        LAT_TOP - FINE_STEP / 2.0,
        -FINE_STEP,
        cfg.fine_rows,
        LON_LEFT + FINE_STEP / 2.0,
        FINE_STEP,
        cfg.fine_cols,
    )
}

/// Coarse grid with at least one node of margin beyond the fine extent.
pub fn coarse_grid(cfg: &WorldConfig) -> Result<Grid> {
    let (dlat, dlon) = (0.5, 0.625);
    let south = LAT_TOP - cfg.fine_rows as f64 * FINE_STEP;
    let east = LON_LEFT + cfg.fine_cols as f64 * FINE_STEP;
    let lat0 = (LAT_TOP / dlat).ceil() * dlat + 2.0 * dlat;
    let n_lat = ((lat0 - south) / dlat).ceil() as usize + 3;
    let lon0 = (LON_LEFT / dlon).floor() * dlon - 2.0 * dlon;
    let n_lon = ((east - lon0) / dlon).ceil() as usize + 3;
    Grid::regular(lat0, -dlat, n_lat, lon0, dlon, n_lon)
}

pub fn generate(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    if cfg.end < cfg.start {
        return Err(Error::InvalidParameter("world end precedes start".into()));
    }
    for (name, rho) in [("driver_rho", cfg.driver_rho), ("noise_rho", cfg.noise_rho)] {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1)")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fine_g = fine_grid(cfg)?;
    let coarse_g = coarse_grid(cfg)?;
    let native_step = FINE_STEP / NATIVE_PER_FINE as f64;
    let elevation_grid = Grid::regular(
        LAT_TOP - native_step / 2.0,
        -native_step,
        cfg.fine_rows * NATIVE_PER_FINE,
        LON_LEFT + native_step / 2.0,
        native_step,
        cfg.fine_cols * NATIVE_PER_FINE,
    )?;
    let elevation = Array2::from_shape_fn(elevation_grid.shape(), |(y, x)| {
        elevation_m(elevation_grid.lat()[y], elevation_grid.lon()[x])
    });
    let elevation_km = block_average(elevation.view(), &elevation_grid, &fine_g)?.mapv(|e| e / 1000.0);
    let plan = RegridPlan::bicubic(&coarse_g, &fine_g)?;

    let n_days = (cfg.end - cfg.start).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..n_days as u64).map(|i| cfg.start + Days::new(i)).collect();
    let pattern = Waves::new(&mut rng, 6, 3.0, 8.0, 0.2).grid(&coarse_g);
    let (cr, cc) = coarse_g.shape();
    let (fr, fc) = fine_g.shape();
    let mut coarse = Array3::zeros((n_days, cr, cc));
    let mut fine = Array3::zeros((n_days, fr, fc));
    let mut anomaly = Array2::<f64>::zeros((cr, cc));
    let mut noise = Array2::<f64>::zeros((fr, fc));
    for (t, date) in dates.iter().enumerate() {
        let fresh_a = Waves::new(&mut rng, 12, 1.5, 6.0, cfg.driver_std).grid(&coarse_g);
        let fresh_n = Waves::new(&mut rng, 16, 0.2, 0.8, cfg.noise_std).grid(&fine_g);
        if t == 0 {
            anomaly = fresh_a;
            noise = fresh_n;
        } else {
            let (ra, rn) = (cfg.driver_rho, cfg.noise_rho);
            anomaly = anomaly * ra + fresh_a * (1.0 - ra * ra).sqrt();
            noise = noise * rn + fresh_n * (1.0 - rn * rn).sqrt();
        }
        let doy = date.ordinal0() as f64;
        let seasonal = -0.7 + 0.15 * (2.0 * PI * doy / 365.25).sin();
        let x = &pattern + &anomaly + seasonal;
        let x_fine = plan.apply(x.view())?;
        let y = x_fine * cfg.slope + &elevation_km * cfg.elevation_coef + cfg.offset + &noise;
        coarse.index_axis_mut(ndarray::Axis(0), t).assign(&x.mapv(|v| 10f64.powf(v)));
        fine.index_axis_mut(ndarray::Axis(0), t).assign(&y.mapv(|v| 10f64.powf(v)));
    }
    Ok(SyntheticWorld {
        coarse: FieldStack::new(coarse, dates.clone(), coarse_g, Space::Raw, "aod_coarse")?,
        fine: FieldStack::new(fine, dates, fine_g, Space::Raw, "aod_fine")?,
        elevation,
        elevation_grid,
    })
}

// ---------------------------------------------------------------------------
// demo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub world: WorldConfig,
    pub season: Season,
    pub t_lag: usize,
    pub lambda: f64,
    pub halo: usize,
    /// Days predicted past the last fine day of the season.
    pub horizon_days: usize,
    /// Largest lag of the rollout lag curves.
    pub max_lag: usize,
    pub acf_lags: usize,
    pub variogram_pairs: usize,
    pub variogram_max_km: f64,
    pub variogram_bins: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            season: Season::JJA,
            t_lag: crate::predictor::DEFAULT_T_LAG,
            lambda: crate::predictor::DEFAULT_LAMBDA,
            halo: crate::stitch::DEFAULT_HALO,
            horizon_days: 10,
            max_lag: 5,
            acf_lags: 10,
            variogram_pairs: 30_000,
            variogram_max_km: 300.0,
            variogram_bins: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub ridge: MetricsReport,
    pub persistence: MetricsReport,
    pub coarse_driver: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutCurves {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub driver: LagCurve,
    pub truth: LagCurve,
    pub prediction: LagCurve,
}

impl RolloutCurves {
    /// Whether the prediction's RMSE and R² at `lag` lie inside the closed
    /// interval spanned by driver and truth.
    pub fn prediction_between(&self, lag: usize) -> bool {
        let Some(i) = self.prediction.lags.iter().position(|&l| l == lag) else {
            return false;
        };
        let inside = |p: f64, a: f64, b: f64| p >= a.min(b) && p <= a.max(b);
        inside(self.prediction.rmse[i], self.driver.rmse[i], self.truth.rmse[i])
            && inside(self.prediction.r2[i], self.driver.r2[i], self.truth.r2[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub ridge_channels: Vec<String>,
    pub ridge_coefficients: Vec<f64>,
    pub ridge_intercept: f64,
    pub dropped_channels: Vec<String>,
    pub standardization: StandardizationParams,
    pub heldout: HeldOut,
    pub rollout: RolloutCurves,
    pub wd_mean: f64,
    pub wd_pooled: f64,
    pub truth_acf: Vec<f64>,
    pub truth_pacf: Vec<f64>,
    pub truth_variogram: SphericalFit,
    pub ridge_variogram: SphericalFit,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub summary: DemoSummary,
    pub ridge_eval: EvalReport,
    pub persistence_eval: EvalReport,
    pub coarse_driver_eval: EvalReport,
    pub rollout_prediction: FieldStack,
    /// Fitted predictor, in standardized space.
    pub ridge: PredictorSpec,
    pub calendar: Calendar,
    /// Standardized model inputs on the fine grid.
    pub driver_z: FieldStack,
    pub fine_z: FieldStack,
    pub elevation: Array2<f64>,
}

fn to_log_stack(z: &FieldStack, params: &StandardizationParams) -> Result<FieldStack> {
    standardize(z, params, Direction::Inverse)
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoOutcome> {
    let world = generate(&cfg.world)?;
    let fine_g = world.fine.grid().clone();
    let coarse_log = to_log10(&world.coarse, DEFAULT_FLOOR_EPS)?;
    let fine_log = to_log10(&world.fine, DEFAULT_FLOOR_EPS)?;
    let driver_log = RegridPlan::bicubic(world.coarse.grid(), &fine_g)?.apply_stack(&coarse_log)?;
    let elevation = block_average(world.elevation.view(), &world.elevation_grid, &fine_g)?;
    let statics = StaticChannels::new(elevation, &fine_g)?;

    // season window over the fine days that precede the rollout horizon
    let last_fine = cfg.world.end - Days::new(cfg.horizon_days as u64);
    let known: Vec<NaiveDate> = fine_log.dates().iter().copied().filter(|&d| d <= last_fine).collect();
    let window = build_season_windows(&known, cfg.season)?;
    let split = temporal_split(&window, SplitRatios::default())?;
    let train_idx: Vec<usize> = split.train().iter().map(|&d| fine_log.date_index(d).expect("day")).collect();
    let params = fit_standardizer_pooled(&[&driver_log, &fine_log], &train_idx)?;
    let driver_z = standardize(&driver_log, &params, Direction::Forward)?;
    let fine_z = standardize(&fine_log, &params, Direction::Forward)?;
    let calendar = Calendar::from_dates(fine_log.dates())?;
    let input = |day| PredictorInput::from_stacks(&fine_z, &driver_z, &statics, &calendar, day, cfg.t_lag);

    let samples = training_patches(&fine_z, &driver_z, &statics, &calendar, split.train(), cfg.t_lag)?;
    let mut ridge = fit_ridge_patch(&samples, cfg.lambda, cfg.t_lag)?;
    ridge.halo = cfg.halo;
    drop(samples);
    let model = ridge.ridge.clone().expect("ridge spec");

    // held-out one-step predictions with true context
    let test_days = split.test().to_vec();
    let kinds = [ridge.clone(), PredictorSpec::persistence(cfg.t_lag), PredictorSpec::coarse_driver(cfg.t_lag)];
    let (h, w) = fine_g.shape();
    let truth_test = fine_log.select_dates(&test_days)?;
    let mut evals = Vec::new();
    let mut ridge_test = None;
    for spec in &kinds {
        let mut values = Array3::zeros((test_days.len(), h, w));
        for (k, &day) in test_days.iter().enumerate() {
            let pred = predict_day(&input(day)?, spec)?;
            values.index_axis_mut(ndarray::Axis(0), k).assign(&pred);
        }
        let z = FieldStack::new(values, test_days.clone(), fine_g.clone(), Space::Standardized, "prediction")?;
        let log = to_log_stack(&z, &params)?;
        evals.push(eval_metrics(&log, &truth_test, None)?);
        if ridge_test.is_none() {
            ridge_test = Some(log);
        }
    }
    let ridge_test = ridge_test.expect("ridge first");

    // autoregressive rollout past the last known fine day
    let mut state = RolloutState::from_stack(&fine_z, last_fine, cfg.t_lag)?;
    let horizon: Vec<NaiveDate> = (1..=cfg.horizon_days as u64).map(|k| last_fine + Days::new(k)).collect();
    let driver_days: Vec<NaiveDate> =
        (0..cfg.t_lag as u64).rev().map(|b| last_fine - Days::new(b)).chain(horizon.iter().copied()).collect();
    let drivers = driver_z.select_dates(&driver_days)?;
    let pred_z = rollout(&mut state, &drivers, &statics, &calendar, &ridge, ContextMode::Autoregressive)?;
    let pred_log = to_log_stack(&pred_z, &params)?;
    let curves = RolloutCurves {
        start: horizon[0],
        end: *horizon.last().expect("horizon"),
        driver: lag_metrics(&driver_log.select_dates(&horizon)?, cfg.max_lag, None)?,
        truth: lag_metrics(&fine_log.select_dates(&horizon)?, cfg.max_lag, None)?,
        prediction: lag_metrics(&pred_log, cfg.max_lag, None)?,
    };

    // structure diagnostics
    let targets = window.target_days.clone();
    let wd = wd_report(&driver_log.select_dates(&targets)?, &fine_log.select_dates(&targets)?, None, DEFAULT_BINS)?;
    let series = regional_mean_series(&fine_log.select_dates(&targets)?, None)?;
    let acf = acf_pacf(&series, cfg.acf_lags)?;
    let pairs = sample_pairs(&fine_g, None, cfg.variogram_pairs, cfg.variogram_max_km, cfg.world.seed)?;
    let bins = DistanceBins::equal_width(cfg.variogram_bins, cfg.variogram_max_km)?;
    let truth_vg = fit_spherical(&stack_variogram(&truth_test, &pairs, &bins)?)?;
    let ridge_vg = fit_spherical(&stack_variogram(&ridge_test, &pairs, &bins)?)?;

    let mut evals = evals.into_iter();
    let (ridge_eval, persistence_eval, coarse_driver_eval) =
        (evals.next().expect("3"), evals.next().expect("3"), evals.next().expect("3"));
    let summary = DemoSummary {
        n_train: split.train().len(),
        n_val: split.val().len(),
        n_test: split.test().len(),
        ridge_channels: model.channels.clone(),
        ridge_coefficients: model.coefficients.clone(),
        ridge_intercept: model.intercept,
        dropped_channels: model.dropped.clone(),
        standardization: params,
        heldout: HeldOut {
            ridge: ridge_eval.mean,
            persistence: persistence_eval.mean,
            coarse_driver: coarse_driver_eval.mean,
        },
        rollout: curves,
        wd_mean: wd.mean,
        wd_pooled: wd.pooled,
        truth_acf: acf.acf,
        truth_pacf: acf.pacf,
        truth_variogram: truth_vg,
        ridge_variogram: ridge_vg,
    };
    Ok(DemoOutcome {
        summary,
        ridge_eval,
        persistence_eval,
        coarse_driver_eval,
        rollout_prediction: pred_log,
        ridge,
        calendar,
        elevation: statics.elevation.clone(),
        driver_z,
        fine_z,
    })
}
