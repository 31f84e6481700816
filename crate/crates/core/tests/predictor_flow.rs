use chrono::{Days, NaiveDate};
use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use downscale_core::diagnostics::metrics_for_day;
use downscale_core::exchange::PatchIndex;
use downscale_core::pipeline::{extract_at, Patch, PatchSpec};
use downscale_core::predictor::{
    fit_ridge, fit_ridge_patch, predict_day, predict_day_with, rollout, Calendar, ContextMode, ExternalCommand,
    IdentityFeaturizer, PatchModel, PredictorInput, PredictorSpec, RolloutState, StaticChannels, TrainingPatch,
};
use downscale_core::raster::{FieldStack, Grid, Space};
use downscale_core::Error;

const H: usize = 24;
const W: usize = 32;
const DAYS: usize = 40;
const T_LAG: usize = 2;

struct World {
    drivers: FieldStack,
    truth: FieldStack,
    statics: StaticChannels,
    calendar: Calendar,
}

fn day(t: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2006, 6, 1).unwrap() + Days::new(t as u64)
}

// fine_t = 2 driver_t + elevation / 1000 + 0.3 fine_{t-1} + 0.1
fn world() -> World {
    let grid = Grid::regular(36.0, -0.0625, H, 40.0, 0.0625, W).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = Normal::new(0.0, 0.5).unwrap();
    let drivers = Array3::from_shape_fn((DAYS, H, W), |_| n.sample(&mut rng));
    let elevation =
        Array2::from_shape_fn((H, W), |(y, x)| 500.0 + 300.0 * (0.3 * y as f64).sin() * (0.2 * x as f64).cos());
    let mut truth = Array3::zeros((DAYS, H, W));
    for t in 0..DAYS {
        let prev = if t == 0 { Array2::zeros((H, W)) } else { truth.index_axis(Axis(0), t - 1).to_owned() };
        let f = &drivers.index_axis(Axis(0), t) * 2.0 + &elevation / 1000.0 + prev * 0.3 + 0.1;
        truth.index_axis_mut(Axis(0), t).assign(&f);
    }
    let dates: Vec<NaiveDate> = (0..DAYS).map(day).collect();
    World {
        drivers: FieldStack::new(drivers, dates.clone(), grid.clone(), Space::Standardized, "driver").unwrap(),
        truth: FieldStack::new(truth, dates.clone(), grid.clone(), Space::Standardized, "fine").unwrap(),
        statics: StaticChannels::new(elevation, &grid).unwrap(),
        calendar: Calendar::from_dates(&dates).unwrap(),
    }
}

fn input(w: &World, t: usize) -> PredictorInput<'_> {
    PredictorInput {
        date: day(t),
        driver: w.drivers.day(t),
        statics: &w.statics,
        calendar: w.calendar.features(day(t)),
        context: (t - T_LAG..t).map(|k| w.truth.day(k)).collect(),
        driver_context: Vec::new(),
    }
}

fn training(w: &World, days: std::ops::Range<usize>) -> Vec<TrainingPatch> {
    let spec = PatchSpec::training();
    let origins = spec.origins(H, W).unwrap();
    let mut out = Vec::new();
    for t in days {
        let (names, planes) = input(w, t).assemble(&IdentityFeaturizer).unwrap();
        for p in extract_at(planes.view(), &names, day(t), &spec, &origins, None).unwrap() {
            let target = w.truth.day(t).slice(s![p.y0..p.y0 + 16, p.x0..p.x0 + 16]).to_owned();
            out.push(TrainingPatch { inputs: p, target });
        }
    }
    out
}

fn coefficient(model: &downscale_core::predictor::RidgeModel, name: &str) -> f64 {
    let k = model.channels.iter().position(|c| c == name).unwrap_or_else(|| panic!("{name} not kept"));
    model.coefficients[k]
}

#[test]
fn ridge_recovers_the_generating_map() {
    let w = world();
    let model = fit_ridge(&training(&w, T_LAG..30), 0.0).unwrap();
    assert_eq!(model.dropped, vec!["season".to_string(), "normalized_year".to_string()]);
    for (name, want) in [("driver", 2.0), ("elevation", 1e-3), ("context_1", 0.3), ("context_2", 0.0), ("lat", 0.0)] {
        assert!((coefficient(&model, name) - want).abs() < 1e-8, "{name}: {}", coefficient(&model, name));
    }
    assert!((model.intercept - 0.1).abs() < 1e-6, "{}", model.intercept);

    let spec = fit_ridge_patch(&training(&w, T_LAG..30), 1e-6, T_LAG).unwrap();
    for t in 30..DAYS {
        let pred = predict_day(&input(&w, t), &spec).unwrap();
        let m = metrics_for_day(pred.view(), w.truth.day(t), None).unwrap();
        assert!(m.r2.unwrap() >= 0.99, "day {t}: {:?}", m.r2);
    }
}

#[test]
fn strong_penalty_shrinks_towards_the_mean() {
    let w = world();
    let samples = training(&w, T_LAG..30);
    let loose = fit_ridge(&samples, 1e-6).unwrap();
    let tight = fit_ridge(&samples, 1e6).unwrap();
    assert!(coefficient(&tight, "driver").abs() < 1e-3 * coefficient(&loose, "driver"));
    // the unpenalized intercept leaves no mean residual on the training pixels
    for model in [&loose, &tight] {
        let (sum, n) = samples.iter().fold((0.0, 0usize), |(s, n), t| {
            let r = &t.target - &model.predict_patch(&t.inputs).unwrap();
            (s + r.sum(), n + r.len())
        });
        assert!((sum / n as f64).abs() < 1e-9, "{}", sum / n as f64);
    }
}

fn ridge_spec(w: &World) -> PredictorSpec {
    fit_ridge_patch(&training(w, T_LAG..30), 1e-4, T_LAG).unwrap()
}

fn drivers_from(w: &World, first: usize) -> FieldStack {
    w.drivers.select_days(&(first..DAYS).collect::<Vec<_>>()).unwrap()
}

#[test]
fn overlap_and_autoregressive_agree_on_the_first_day() {
    let w = world();
    let spec = ridge_spec(&w);
    let drivers = drivers_from(&w, 30);
    let mut ar = RolloutState::from_stack(&w.truth, day(29), T_LAG).unwrap();
    let mut ov = ar.clone();
    let a = rollout(&mut ar, &drivers, &w.statics, &w.calendar, &spec, ContextMode::Autoregressive).unwrap();
    let o = rollout(&mut ov, &drivers, &w.statics, &w.calendar, &spec, ContextMode::Overlap(&w.truth)).unwrap();
    assert_eq!(a.day(0), o.day(0));
    assert_ne!(a.day(5), o.day(5));
    assert_eq!(a.dates(), &(30..DAYS).map(day).collect::<Vec<_>>()[..]);
    for s in [&ar, &ov] {
        assert_eq!(s.t_lag(), T_LAG);
        assert_eq!(s.current_date(), day(DAYS - 1));
    }
    // the autoregressive buffer ends with its own last predictions
    let tail: Vec<_> = ar.fields().cloned().collect();
    assert_eq!(tail[1], a.day(DAYS - 31).to_owned());
    assert_eq!(ov.newest(), &w.truth.day(DAYS - 1).to_owned());
}

#[test]
fn rollout_is_thread_count_invariant() {
    let w = world();
    let spec = ridge_spec(&w);
    let drivers = drivers_from(&w, 30);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut st = RolloutState::from_stack(&w.truth, day(29), T_LAG).unwrap();
            rollout(&mut st, &drivers, &w.statics, &w.calendar, &spec, ContextMode::Autoregressive).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn rollout_rejects_mismatched_state() {
    let w = world();
    let spec = ridge_spec(&w);
    let mut st = RolloutState::from_stack(&w.truth, day(29), 3).unwrap();
    let r = rollout(&mut st, &drivers_from(&w, 30), &w.statics, &w.calendar, &spec, ContextMode::Autoregressive);
    assert!(matches!(r, Err(Error::InvalidParameter(_))));
    let mut st = RolloutState::from_stack(&w.truth, day(27), T_LAG).unwrap();
    let r = rollout(&mut st, &drivers_from(&w, 30), &w.statics, &w.calendar, &spec, ContextMode::Autoregressive);
    assert!(matches!(r, Err(Error::DriverGap(_))));
    assert!(RolloutState::from_stack(&w.truth, day(0), T_LAG).is_err());
}

#[test]
fn missing_context_is_reported() {
    let w = world();
    let spec = ridge_spec(&w);
    let mut inp = input(&w, 31);
    inp.context.pop();
    assert!(matches!(predict_day(&inp, &spec), Err(Error::MissingChannel(_))));
}

/// Doubles the driver channel after the f32 round trip the bridge imposes.
struct DoubleDriver;

impl PatchModel for DoubleDriver {
    fn predict_patches(
        &self,
        _: NaiveDate,
        _: (usize, usize),
        patches: &[Patch],
    ) -> downscale_core::Result<Vec<Array2<f64>>> {
        Ok(patches.iter().map(|p| p.channel("driver").unwrap().mapv(|v| (v as f32 * 2.0) as f64)).collect())
    }
}

const SCRIPT: &str = r#"
import json, os, sys
import numpy as np
x = np.load(os.environ["DOWNSCALE_INPUTS"])
idx = json.load(open(sys.argv[1]))
assert x.shape[0] == len(idx["rows"]) and x.shape[1] == len(idx["channels"])
c = idx["channels"].index("driver")
np.save(sys.argv[2], (x[:, c:c + 1] * 2).astype("<f4"))
"#;

#[test]
fn external_bridge_round_trip() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("model.py");
    std::fs::write(&script, SCRIPT).unwrap();
    let cmd = ExternalCommand {
        command: vec!["python3".into(), script.to_string_lossy().into_owned(), "{index}".into(), "{output}".into()],
        work_dir: dir.path().join("exchange"),
    };
    let spec = PredictorSpec::external(cmd, T_LAG, None);
    let inp = input(&w, 33);
    let got = predict_day(&inp, &spec).unwrap();
    let want = predict_day_with(&inp, &spec, &DoubleDriver).unwrap();
    assert_eq!(got, want);

    let index = PatchIndex::read(&dir.path().join("exchange/patches.json")).unwrap();
    assert_eq!(index.days(), vec![day(33)]);
    assert_eq!(index.rows.len(), PatchSpec::inference(2).unwrap().covering_origins(H, W).unwrap().len());
    assert!(dir.path().join("exchange/inputs_2006-07-04.npy").exists());
    assert!(dir.path().join("exchange/preds_2006-07-04.npy").exists());
}

#[test]
fn external_failures_surface() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let fails = ExternalCommand { command: vec!["false".into()], work_dir: dir.path().to_path_buf() };
    let r = predict_day(&input(&w, 33), &PredictorSpec::external(fails, T_LAG, None));
    assert!(matches!(r, Err(Error::External(_))));

    let wrong = ExternalCommand {
        command: vec![
            "python3".into(),
            "-c".into(),
            "import numpy as np, os; np.save(os.environ['DOWNSCALE_OUTPUT'], np.zeros((3, 16, 16), '<f4'))".into(),
        ],
        work_dir: dir.path().to_path_buf(),
    };
    let r = predict_day(&input(&w, 33), &PredictorSpec::external(wrong, T_LAG, None));
    assert!(matches!(r, Err(Error::ShapeMismatch(_))));
}
