use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use downscale_core::diagnostics::{
    acf_pacf, eval_metrics, fit_spherical, lag_metrics, regional_mean_series, sample_pairs, stack_variogram,
    DistanceBins, MetricsReport, SphericalFit, VariogramEstimate,
};
use downscale_core::exchange::{PatchIndex, PatchRow};
use downscale_core::npy::{read_npy, write_f64_as_f32, write_u8};
use downscale_core::pipeline::{
    build_season_windows, extract_patches, group_by_day, temporal_split, PatchSpec, Role, Season, SplitAssignment,
    SplitRatios,
};
use downscale_core::predictor::{
    fit_ridge_patch, rollout, training_patches, Calendar, ContextMode, PredictorKind, PredictorSpec, RidgeModel,
    RolloutState, SoftClamp, StaticChannels,
};
use downscale_core::raster::{
    load_stack, load_static, meta_path, read_meta, save_stack, save_static, FieldStack, Grid,
};
use downscale_core::regrid::RegridPlan;
use downscale_core::similarity::wd_report;
use downscale_core::synthetic::{generate, run_demo, DemoConfig};

use crate::config::PredictorConfig;
use crate::run::{dir_of, internal, invalid, CliResult, Run};
use crate::{
    AcfArgs, Cli, Command, DemoArgs, EvalArgs, LagArgs, ModeArg, PatchArgs, RegridArgs, RegridMethod, RoleArg,
    RolloutArgs, SplitArgs, StitchArgs, VariogramArgs, WdArgs,
};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let m = cli.manifest.as_deref();
    let t = cli.threads;
    match &cli.command {
        Command::Regrid(a) => regrid(a, Run::new("regrid", t, a)?, m),
        Command::Split(a) => split(a, Run::new("split", t, a)?, m),
        Command::Patch(a) => patch(a, Run::new("patch", t, a)?, m),
        Command::Stitch(a) => stitch(a, Run::new("stitch", t, a)?, m),
        Command::Wd(a) => wd(a, Run::new("wd", t, a)?, m),
        Command::Variogram(a) => variogram(a, Run::new("variogram", t, a)?, m),
        Command::Acf(a) => acf(a, Run::new("acf", t, a)?, m),
        Command::Lagmetrics(a) => lagmetrics(a, Run::new("lagmetrics", t, a)?, m),
        Command::Eval(a) => eval(a, Run::new("eval", t, a)?, m),
        Command::Rollout(a) => rollout_cmd(a, Run::new("rollout", t, a)?, m),
        Command::Demo(a) => demo(a, t, m),
    }
}

fn stack_in(run: &mut Run, path: &Path) -> CliResult<FieldStack> {
    run.input(path)?;
    Ok(load_stack(path)?)
}

fn mask_in(run: &mut Run, path: Option<&Path>) -> CliResult<Option<Array2<bool>>> {
    let Some(path) = path else { return Ok(None) };
    run.input(path)?;
    let arr = read_npy(path)?;
    let [h, w] = arr.shape[..] else {
        return Err(invalid(format!("mask must be 2D, got shape {:?}", arr.shape)));
    };
    Ok(Some(Array2::from_shape_vec((h, w), arr.to_bool()).map_err(internal)?))
}

fn grid_in(run: &mut Run, path: &Path) -> CliResult<Grid> {
    run.input(path)?;
    Ok(read_meta(path)?.grid()?)
}

fn save(run: &mut Run, stack: &FieldStack, path: &Path) -> CliResult<()> {
    crate::run::ensure_parent(path)?;
    save_stack(stack, path).map_err(internal)?;
    run.output(path)
}

// ---------------------------------------------------------------------------

fn regrid(a: &RegridArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let target = grid_in(&mut run, &a.target_grid)?;
    run.input(&a.src)?;
    let meta = read_meta(&meta_path(&a.src))?;
    let plan = |src: &Grid| match a.method {
        RegridMethod::Bicubic => RegridPlan::bicubic(src, &target),
        RegridMethod::Blockmean => RegridPlan::block_mean(src, &target),
    };
    crate::run::ensure_parent(&a.out)?;
    if meta.dates.is_empty() {
        let (values, grid) = load_static(&a.src)?;
        let out = plan(&grid)?.apply(values.view())?;
        save_static(&out, &target, &meta.var_name, &a.out).map_err(internal)?;
        run.output(&a.out)?;
    } else {
        let stack = load_stack(&a.src)?;
        let out = plan(stack.grid())?.apply_stack(&stack)?;
        save(&mut run, &out, &a.out)?;
    }
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

#[derive(Serialize, Deserialize)]
struct SplitReport {
    season: Season,
    ratios: SplitRatios,
    holdout_fraction: f64,
    train: Vec<NaiveDate>,
    val: Vec<NaiveDate>,
    test: Vec<NaiveDate>,
    /// Trailing train days reserved for validation during fitting.
    train_holdout: Vec<NaiveDate>,
    /// Lag-context days preceding each seasonal block.
    buffer: Vec<NaiveDate>,
}

#[derive(Serialize)]
struct DateRole {
    date: NaiveDate,
    role: &'static str,
}

fn parse_ratios(s: &str) -> CliResult<SplitRatios> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| invalid(format!("ratio {p:?}: {e}"))))
        .collect::<CliResult<_>>()?;
    let [train, val, test] = v[..] else {
        return Err(invalid(format!("expected three ratios, got {s:?}")));
    };
    Ok(SplitRatios::new(train, val, test)?)
}

fn split(a: &SplitArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let season: Season = a.season.parse()?;
    let ratios = parse_ratios(&a.ratios)?;
    run.input(&a.src)?;
    let meta_file = if a.src.extension().is_some_and(|e| e == "json") { a.src.clone() } else { meta_path(&a.src) };
    let meta = read_meta(&meta_file)?;
    let window = build_season_windows(&meta.dates, season)?;
    let s = temporal_split(&window, ratios)?;
    let (_, held) = s.train_holdout(a.holdout)?;
    let report = SplitReport {
        season,
        ratios,
        holdout_fraction: a.holdout,
        train: s.train().to_vec(),
        val: s.val().to_vec(),
        test: s.test().to_vec(),
        train_holdout: held.clone(),
        buffer: window.buffer_days.clone(),
    };
    let mut rows: Vec<DateRole> = Vec::new();
    fn tag<'a>(days: &'a [NaiveDate], role: &'static str) -> impl Iterator<Item = DateRole> + 'a {
        days.iter().map(move |&date| DateRole { date, role })
    }
    rows.extend(tag(&window.buffer_days, "buffer"));
    rows.extend(tag(s.train(), "train").filter(|r| !held.contains(&r.date)));
    rows.extend(tag(&held, "train_holdout"));
    rows.extend(tag(s.val(), "val"));
    rows.extend(tag(s.test(), "test"));
    rows.sort_by_key(|r| r.date);
    run.write_json(&a.out, &report)?;
    run.write_csv(&a.out.with_extension("csv"), rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

fn read_split(run: &mut Run, path: &Path) -> CliResult<SplitAssignment> {
    run.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn patch(a: &PatchArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let stack = stack_in(&mut run, &a.src)?;
    let spec = PatchSpec::new(a.size, a.size, a.stride, 0)?;
    let split = a.split.as_deref().map(|p| read_split(&mut run, p)).transpose()?;
    let mut patches = Vec::new();
    for (t, &day) in stack.dates().iter().enumerate() {
        if split.as_ref().is_some_and(|s| s.role_of(day).is_none()) {
            continue;
        }
        patches.extend(extract_patches(stack.day(t), day, &spec)?);
    }
    let ordered: Vec<_> = match &split {
        Some(s) => {
            let role = match a.role {
                RoleArg::Train => Role::Train,
                RoleArg::Val => Role::Val,
                RoleArg::Test => Role::Test,
            };
            group_by_day(patches, s, a.seed)?.stream(role).cloned().collect()
        }
        None => patches,
    };
    if ordered.is_empty() {
        return Err(invalid("no patches selected"));
    }
    let (h, w) = stack.grid().shape();
    let flat: Vec<f64> = ordered.iter().flat_map(|p| p.values.iter().copied()).collect();
    crate::run::ensure_parent(&a.out)?;
    write_f64_as_f32(&a.out, &[ordered.len(), 1, a.size, a.size], &flat).map_err(internal)?;
    run.output(&a.out)?;
    let index = PatchIndex {
        image_height: h,
        image_width: w,
        patch_height: a.size,
        patch_width: a.size,
        stride: a.stride,
        space: stack.space(),
        channels: vec![stack.var_name().to_string()],
        rows: ordered.iter().map(|p| PatchRow { day: p.day, y0: p.y0, x0: p.x0 }).collect(),
    };
    crate::run::ensure_parent(&a.index)?;
    index.write(&a.index).map_err(internal)?;
    run.output(&a.index)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

fn stitch(a: &StitchArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    run.input(&a.index)?;
    let index = PatchIndex::read(&a.index)?;
    run.input(&a.patches)?;
    let arr = read_npy(&a.patches)?;
    let (ph, pw) = (index.patch_height, index.patch_width);
    let n = index.rows.len();
    let ok = match arr.shape[..] {
        [m, hh, ww] | [m, 1, hh, ww] => m == n && (hh, ww) == (ph, pw),
        _ => false,
    };
    if !ok {
        return Err(invalid(format!("patch array shape {:?} does not match index ({n} rows of {ph}x{pw})", arr.shape)));
    }
    let image = (index.image_height, index.image_width);
    let grid = match &a.grid {
        Some(g) => grid_in(&mut run, g)?,
        None => Grid::regular(0.0, -1.0, image.0, 0.0, 1.0, image.1)?,
    };
    if grid.shape() != image {
        return Err(invalid(format!("grid {:?} vs image {:?}", grid.shape(), image)));
    }
    let data = arr.to_f64();
    let patches: Vec<Array2<f64>> =
        data.chunks(ph * pw).map(|c| Array2::from_shape_vec((ph, pw), c.to_vec()).expect("sized")).collect();
    let mut by_day: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (k, r) in index.rows.iter().enumerate() {
        by_day.entry(r.day).or_default().push(k);
    }
    let days: Vec<NaiveDate> = by_day.keys().copied().collect();
    let mut values = Array3::zeros((days.len(), image.0, image.1));
    let mut cover = Vec::with_capacity(days.len() * image.0 * image.1);
    for (t, rows) in by_day.values().enumerate() {
        let placed: Vec<_> = rows
            .iter()
            .map(|&k| downscale_core::stitch::PlacedPatch {
                y0: index.rows[k].y0,
                x0: index.rows[k].x0,
                values: patches[k].view(),
            })
            .collect();
        let mut acc = downscale_core::stitch::StitchAccumulator::new(image, (ph, pw), a.halo, a.eps)?;
        acc.accumulate_par(&placed)?;
        let out = acc.finalize();
        values.index_axis_mut(Axis(0), t).assign(&out.values);
        cover.extend(out.covered.iter().map(|&c| u8::from(c)));
    }
    let stack = FieldStack::new(values, days.clone(), grid, index.space, "stitched")?;
    save(&mut run, &stack, &a.out)?;
    crate::run::ensure_parent(&a.mask_out)?;
    write_u8(&a.mask_out, &[days.len(), image.0, image.1], &cover).map_err(internal)?;
    run.output(&a.mask_out)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

#[derive(Serialize)]
struct WdRow {
    date: NaiveDate,
    wd: f64,
    n_pixels: usize,
}

fn wd(a: &WdArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let x = stack_in(&mut run, &a.x)?;
    let y = stack_in(&mut run, &a.y)?;
    let mask = mask_in(&mut run, a.mask.as_deref())?;
    let report = wd_report(&x, &y, mask.as_ref().map(|m| m.view()), a.bins)?;
    let rows: Vec<WdRow> =
        report.per_day.iter().map(|d| WdRow { date: d.date, wd: d.wd, n_pixels: d.n_pixels }).collect();
    run.write_report(&a.out, &report, rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

#[derive(Serialize)]
struct VariogramReport {
    n_pairs: usize,
    exhaustive: bool,
    seed: u64,
    n_days: usize,
    estimate: VariogramEstimate,
    /// Absent when fewer than three bins hold pairs.
    fit: Option<SphericalFit>,
}

#[derive(Serialize)]
struct VariogramRow {
    bin: usize,
    lo_km: f64,
    hi_km: f64,
    center_km: f64,
    gamma: f64,
    pairs: usize,
    model: Option<f64>,
}

fn variogram(a: &VariogramArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let stack = stack_in(&mut run, &a.src)?;
    let mask = mask_in(&mut run, a.mask.as_deref())?;
    let combined = combine_mask(&stack, mask);
    let pairs = sample_pairs(stack.grid(), combined.as_ref().map(|m| m.view()), a.pairs, a.max_km, a.seed)?;
    let bins = DistanceBins::equal_width(a.bins, a.max_km)?;
    let estimate = stack_variogram(&stack, &pairs, &bins)?;
    let fit = fit_spherical(&estimate).ok();
    let rows: Vec<VariogramRow> = (0..estimate.gamma.len())
        .map(|k| VariogramRow {
            bin: k,
            lo_km: estimate.bin_edges[k],
            hi_km: estimate.bin_edges[k + 1],
            center_km: estimate.bin_centers[k],
            gamma: estimate.gamma[k],
            pairs: estimate.pair_counts[k],
            model: fit.map(|f| f.model(estimate.bin_centers[k])),
        })
        .collect();
    let report = VariogramReport {
        n_pairs: pairs.pairs.len(),
        exhaustive: pairs.exhaustive,
        seed: a.seed,
        n_days: stack.n_days(),
        estimate,
        fit,
    };
    run.write_report(&a.out, &report, rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

fn combine_mask(stack: &FieldStack, mask: Option<Array2<bool>>) -> Option<Array2<bool>> {
    match (mask, stack.valid()) {
        (None, None) => None,
        (Some(m), None) => Some(m),
        (None, Some(v)) => Some(v.clone()),
        (Some(m), Some(v)) => Some(&m & v),
    }
}

#[derive(Serialize)]
struct AcfRow {
    lag: usize,
    acf: f64,
    pacf: f64,
}

fn acf(a: &AcfArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let stack = stack_in(&mut run, &a.src)?;
    let mask = mask_in(&mut run, a.mask.as_deref())?;
    let series = regional_mean_series(&stack, mask.as_ref().map(|m| m.view()))?;
    let report = acf_pacf(&series, a.max_lag)?;
    let rows: Vec<AcfRow> = (0..report.lags.len())
        .map(|k| AcfRow { lag: report.lags[k], acf: report.acf[k], pacf: report.pacf[k] })
        .collect();
    run.write_report(&a.out, &report, rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

#[derive(Serialize)]
struct LagRow {
    lag: usize,
    rmse: f64,
    r2: f64,
    n_pairs: usize,
}

fn lagmetrics(a: &LagArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let stack = stack_in(&mut run, &a.src)?;
    let mask = mask_in(&mut run, a.mask.as_deref())?;
    let curve = lag_metrics(&stack, a.max_lag, mask.as_ref().map(|m| m.view()))?;
    let rows: Vec<LagRow> = (0..curve.lags.len())
        .map(|k| LagRow { lag: curve.lags[k], rmse: curve.rmse[k], r2: curve.r2[k], n_pairs: curve.n_pairs[k] })
        .collect();
    run.write_report(&a.out, &curve, rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

#[derive(Serialize)]
struct MetricsRow {
    label: String,
    mae: f64,
    rmse: f64,
    r2: Option<f64>,
    nse: Option<f64>,
    kge: Option<f64>,
    r: Option<f64>,
    beta: Option<f64>,
    gamma_ratio: Option<f64>,
}

fn metrics_row(label: String, m: &MetricsReport) -> MetricsRow {
    MetricsRow {
        label,
        mae: m.mae,
        rmse: m.rmse,
        r2: m.r2,
        nse: m.nse,
        kge: m.kge,
        r: m.r,
        beta: m.beta,
        gamma_ratio: m.gamma_ratio,
    }
}

fn eval(a: &EvalArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    let pred = stack_in(&mut run, &a.pred)?;
    let truth = stack_in(&mut run, &a.truth)?;
    let mask = mask_in(&mut run, a.mask.as_deref())?;
    let report = eval_metrics(&pred, &truth, mask.as_ref().map(|m| m.view()))?;
    let rows: Vec<MetricsRow> = report
        .per_day
        .iter()
        .map(|d| metrics_row(d.date.to_string(), &d.metrics))
        .chain(std::iter::once(metrics_row("mean".into(), &report.mean)))
        .collect();
    run.write_report(&a.out, &report, rows)?;
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

// ---------------------------------------------------------------------------

fn predictor_spec(
    cfg: &PredictorConfig,
    run: &mut Run,
    fine: &FieldStack,
    drivers: &FieldStack,
    statics: &StaticChannels,
    calendar: &Calendar,
) -> CliResult<PredictorSpec> {
    let clamp = cfg.clamp.as_ref().map(|c| SoftClamp::new(c.lo, c.hi, c.knee)).transpose()?;
    let mut spec = match cfg.kind {
        PredictorKind::Persistence => PredictorSpec::persistence(cfg.t_lag),
        PredictorKind::CoarseDriver => PredictorSpec::coarse_driver(cfg.t_lag),
        PredictorKind::RidgePatch => match (&cfg.model, &cfg.split) {
            (Some(path), _) => {
                run.input(path)?;
                let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                let model: RidgeModel =
                    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                PredictorSpec::ridge(model, cfg.t_lag, clamp)
            }
            (None, Some(path)) => {
                let split = read_split(run, path)?;
                let samples = training_patches(fine, drivers, statics, calendar, split.train(), cfg.t_lag)?;
                let mut spec = fit_ridge_patch(&samples, cfg.lambda, cfg.t_lag)?;
                if clamp.is_some() {
                    spec.clamp = clamp;
                }
                spec
            }
            (None, None) => return Err(invalid("ridge_patch needs `model` or `split` in the config")),
        },
        PredictorKind::External => {
            let cmd = cfg.external.clone().ok_or_else(|| invalid("external kind needs an [external] table"))?;
            PredictorSpec::external(cmd, cfg.t_lag, clamp)
        }
    };
    spec.halo = cfg.halo.unwrap_or(spec.halo);
    spec.stride = cfg.stride.unwrap_or(spec.stride);
    spec.eps = cfg.eps.unwrap_or(spec.eps);
    spec.validate()?;
    Ok(spec)
}

fn rollout_cmd(a: &RolloutArgs, mut run: Run, manifest: Option<&Path>) -> CliResult<()> {
    run.input(&a.config)?;
    let cfg = PredictorConfig::load(&a.config)?;
    let fine = stack_in(&mut run, &a.fine)?;
    let drivers = stack_in(&mut run, &a.drivers)?;
    run.input(&a.elevation)?;
    let (elevation, egrid) = load_static(&a.elevation)?;
    if &egrid != fine.grid() || drivers.grid() != fine.grid() {
        return Err(invalid("fine, drivers and elevation must share one grid"));
    }
    if fine.space() != drivers.space() {
        return Err(invalid(format!(
            "fine stack is {} but drivers are {}",
            fine.space().name(),
            drivers.space().name()
        )));
    }
    let statics = StaticChannels::new(elevation, fine.grid())?;
    let calendar = match cfg.calendar {
        Some(c) => Calendar::new(c.origin, c.first_year, c.last_year)?,
        None => {
            let all: Vec<NaiveDate> = fine.dates().iter().chain(drivers.dates()).copied().collect();
            Calendar::from_dates(&all)?
        }
    };
    let spec = predictor_spec(&cfg, &mut run, &fine, &drivers, &statics, &calendar)?;

    let start = match a.start {
        Some(d) => d,
        None => *fine.dates().last().ok_or_else(|| invalid("fine stack has no days"))?,
    };
    let mut state = RolloutState::from_stack(&fine, start, cfg.t_lag)?;
    let mut horizon = Vec::new();
    let mut d = start + Days::new(1);
    while drivers.date_index(d).is_some() && a.days.is_none_or(|n| horizon.len() < n) {
        horizon.push(d);
        d = d + Days::new(1);
    }
    if horizon.is_empty() {
        return Err(invalid(format!("no driver for {}", start + Days::new(1))));
    }
    if let Some(n) = a.days {
        if horizon.len() < n {
            return Err(invalid(format!("drivers cover only {} of {n} days after {start}", horizon.len())));
        }
    }
    let mut keep: Vec<NaiveDate> = (1..=cfg.t_lag as u64)
        .rev()
        .map(|b| start - Days::new(b - 1))
        .filter(|d| drivers.date_index(*d).is_some())
        .collect();
    keep.extend(&horizon);
    let drivers = drivers.select_dates(&keep)?;
    let mode = match a.mode {
        ModeArg::Autoregressive => ContextMode::Autoregressive,
        ModeArg::Overlap => ContextMode::Overlap(&fine),
    };
    let pred = rollout(&mut state, &drivers, &statics, &calendar, &spec, mode)?;
    save(&mut run, &pred, &a.out)?;
    if let Some(path) = &a.save_model {
        let model = spec.ridge.as_ref().ok_or_else(|| invalid("--save-model needs a ridge_patch predictor"))?;
        run.write_json(path, model)?;
    }
    run.finish(&dir_of(&a.out), manifest).map(drop)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RolloutRow {
    lag: usize,
    n_pairs: usize,
    driver_rmse: f64,
    prediction_rmse: f64,
    truth_rmse: f64,
    driver_r2: f64,
    prediction_r2: f64,
    truth_r2: f64,
}

#[derive(Serialize)]
struct DemoParameters<'a> {
    #[serde(flatten)]
    args: &'a DemoArgs,
    resolved: &'a DemoConfig,
}

/// `predictor.toml` pointing at the demo's fitted ridge model.
fn demo_predictor_toml(spec: &PredictorSpec, calendar: &Calendar) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kind = \"ridge_patch\"");
    let _ = writeln!(s, "t_lag = {}", spec.t_lag);
    let _ = writeln!(s, "halo = {}", spec.halo);
    let _ = writeln!(s, "stride = {}", spec.stride);
    let _ = writeln!(s, "eps = {:e}", spec.eps);
    let _ = writeln!(s, "model = \"ridge.json\"");
    if let Some(c) = spec.clamp {
        let _ = writeln!(s, "\n[clamp]\nlo = {:?}\nhi = {:?}\nknee = {:?}", c.lo, c.hi, c.knee);
    }
    let _ = writeln!(
        s,
        "\n[calendar]\norigin = \"{}\"\nfirst_year = {}\nlast_year = {}",
        calendar.origin, calendar.first_year, calendar.last_year
    );
    s
}

fn demo(a: &DemoArgs, threads: Option<usize>, manifest: Option<&Path>) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            toml::from_str::<DemoConfig>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => DemoConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.world.seed = seed;
    }
    let mut run = Run::new("demo", threads, &DemoParameters { args: a, resolved: &cfg })?;
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let out = run_demo(&cfg)?;
    let dir = &a.out_dir;
    let path = |name: &str| -> PathBuf { dir.join(name) };

    let s = &out.summary;
    run.write_json(&path("summary.json"), s)?;
    let heldout = [
        ("ridge_patch", &s.heldout.ridge),
        ("persistence", &s.heldout.persistence),
        ("coarse_driver", &s.heldout.coarse_driver),
    ];
    run.write_csv(&path("heldout.csv"), heldout.iter().map(|(k, m)| metrics_row(k.to_string(), m)))?;
    let c = &s.rollout;
    run.write_csv(
        &path("rollout_lags.csv"),
        (0..c.prediction.lags.len()).map(|k| RolloutRow {
            lag: c.prediction.lags[k],
            n_pairs: c.prediction.n_pairs[k],
            driver_rmse: c.driver.rmse[k],
            prediction_rmse: c.prediction.rmse[k],
            truth_rmse: c.truth.rmse[k],
            driver_r2: c.driver.r2[k],
            prediction_r2: c.prediction.r2[k],
            truth_r2: c.truth.r2[k],
        }),
    )?;
    let ridge_eval_rows: Vec<MetricsRow> =
        out.ridge_eval.per_day.iter().map(|d| metrics_row(d.date.to_string(), &d.metrics)).collect();
    run.write_csv(&path("ridge_eval.csv"), ridge_eval_rows)?;
    run.write_json(&path("ridge.json"), out.ridge.ridge.as_ref().expect("ridge model"))?;
    let toml_path = path("predictor.toml");
    std::fs::write(&toml_path, demo_predictor_toml(&out.ridge, &out.calendar)).map_err(internal)?;
    run.output(&toml_path)?;
    save(&mut run, &out.rollout_prediction, &path("rollout.npy"))?;
    if a.world {
        let world = generate(&cfg.world)?;
        save(&mut run, &world.coarse, &path("world/coarse.npy"))?;
        save(&mut run, &world.fine, &path("world/fine.npy"))?;
        save_static(&world.elevation, &world.elevation_grid, "elevation", path("world/elevation.npy"))
            .map_err(internal)?;
        run.output(&path("world/elevation.npy"))?;
        save(&mut run, &out.driver_z, &path("world/driver_z.npy"))?;
        save(&mut run, &out.fine_z, &path("world/fine_z.npy"))?;
        save_static(&out.elevation, out.fine_z.grid(), "elevation", path("world/elevation_fine.npy"))
            .map_err(internal)?;
        run.output(&path("world/elevation_fine.npy"))?;
    }
    run.finish(dir, manifest)?;
    print!("{}", summary_text(&out.summary, &cfg));
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn summary_text(s: &downscale_core::synthetic::DemoSummary, cfg: &DemoConfig) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "season {}: {} train / {} val / {} test days (seed {})",
        cfg.season, s.n_train, s.n_val, s.n_test, cfg.world.seed
    );
    let _ = writeln!(t, "held-out one-step skill (log10 space):");
    let _ = writeln!(t, "  {:<14} {:>8} {:>8} {:>8} {:>8}", "predictor", "MAE", "RMSE", "R2", "KGE");
    for (name, m) in [
        ("ridge_patch", &s.heldout.ridge),
        ("persistence", &s.heldout.persistence),
        ("coarse_driver", &s.heldout.coarse_driver),
    ] {
        let _ = writeln!(t, "  {:<14} {:>8.4} {:>8.4} {:>8} {:>8}", name, m.mae, m.rmse, fmt_opt(m.r2), fmt_opt(m.kge));
    }
    let c = &s.rollout;
    let _ = writeln!(t, "rollout {}..{} lag curves (RMSE / R2):", c.start, c.end);
    for k in 0..c.prediction.lags.len() {
        let _ = writeln!(
            t,
            "  lag {:>2}: driver {:.4}/{:.4}  prediction {:.4}/{:.4}  truth {:.4}/{:.4}",
            c.prediction.lags[k],
            c.driver.rmse[k],
            c.driver.r2[k],
            c.prediction.rmse[k],
            c.prediction.r2[k],
            c.truth.rmse[k],
            c.truth.r2[k]
        );
    }
    let _ = writeln!(t, "coarse vs fine Wasserstein: mean {:.4}, pooled {:.4}", s.wd_mean, s.wd_pooled);
    let v = |f: &SphericalFit| format!("nugget {:.4} sill {:.4} range {:.1} km", f.nugget, f.sill(), f.range_km);
    let _ = writeln!(t, "variogram truth: {}", v(&s.truth_variogram));
    let _ = writeln!(t, "variogram ridge: {}", v(&s.ridge_variogram));
    let acf: Vec<String> = s.truth_acf.iter().take(5).map(|x| format!("{x:.3}")).collect();
    let _ = writeln!(t, "truth ACF lags 1-5: {}", acf.join(" "));
    t
}
