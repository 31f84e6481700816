//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use downscale_core::diagnostics::metrics::{eval_metrics, metrics_for_day};
use downscale_core::diagnostics::temporal::{acf_pacf, autocorrelation};
use downscale_core::diagnostics::variogram::{
    empirical_variogram, fit_spherical, sample_pairs, spherical_shape, DistanceBins, VariogramEstimate,
};
use downscale_core::pipeline::{
    extract_patches, group_by_day, split_days, PatchSpec, Role, SplitAssignment, SplitRatios,
};
use downscale_core::raster::{FieldStack, Grid, Space};
use downscale_core::regrid::{block_average, RegridPlan};
use downscale_core::similarity::{wasserstein_exact, wasserstein_hist};
use downscale_core::stitch::{hann_window, PlacedPatch, StitchAccumulator};
use downscale_core::synthetic::{run_demo, DemoConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, format!("runtime {:.2}s exceeds {limit_s}s", elapsed.as_secs_f64()))
}

fn day(i: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2006, 6, 1).unwrap() + Days::new(i)
}

// 1 ---------------------------------------------------------------------

fn stitch_patches(rng: &mut ChaCha8Rng) -> Vec<(usize, usize, Array2<f64>)> {
    let spec = PatchSpec::inference(2).unwrap();
    spec.covering_origins(64, 64)
        .unwrap()
        .into_iter()
        .map(|(y, x)| (y, x, Array2::from_shape_fn((16, 16), |_| rng.gen_range(-3.0..3.0))))
        .collect()
}

fn stitch_in_batches(patches: &[(usize, usize, Array2<f64>)], order: &[usize], cuts: &[usize]) -> Array2<f64> {
    let mut acc = StitchAccumulator::new((64, 64), (16, 16), 2, 1e-8).unwrap();
    let placed: Vec<PlacedPatch<'_>> = order
        .iter()
        .map(|&i| PlacedPatch { y0: patches[i].0, x0: patches[i].1, values: patches[i].2.view() })
        .collect();
    let mut start = 0;
    for &end in cuts.iter().chain(std::iter::once(&placed.len())) {
        acc.accumulate(&placed[start..end]).unwrap();
        start = end;
    }
    acc.finalize().values
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patches = stitch_patches(&mut rng);
    let canonical: Vec<usize> = (0..patches.len()).collect();
    let reference = stitch_in_batches(&patches, &canonical, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut order = canonical.clone();
        order.shuffle(&mut rng);
        let mut cuts: Vec<usize> = (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0..patches.len())).collect();
        cuts.sort_unstable();
        let img = stitch_in_batches(&patches, &order, &cuts);
        for (a, b) in img.iter().zip(reference.iter()) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
        // same order, different batch boundaries: bit-exact
        let again = stitch_in_batches(&patches, &canonical, &cuts);
        check(again == reference, "fixed-order re-batching is not bit-exact")?;
    }
    check(worst <= 1e-10, format!("max relative deviation {worst:.3e}"))?;

    // parallel accumulation does not depend on the thread count
    let placed: Vec<PlacedPatch<'_>> =
        patches.iter().map(|(y, x, v)| PlacedPatch { y0: *y, x0: *x, values: v.view() }).collect();
    let par = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let mut acc = StitchAccumulator::new((64, 64), (16, 16), 2, 1e-8).unwrap();
            acc.accumulate_par(&placed).unwrap();
            acc.finalize().values
        })
    };
    check(par(1) == par(4), "accumulate_par differs between 1 and 4 threads")?;
    within(t0.elapsed(), 5.0)?;
    Ok(format!("20 partitions, max rel dev {worst:.1e}, {:.2}s", t0.elapsed().as_secs_f64()))
}

// 2 ---------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let c = 0.7316;
    let spec = PatchSpec::inference(2).unwrap();
    let constant = Array2::from_elem((16, 16), c);
    let placed: Vec<PlacedPatch<'_>> = spec
        .covering_origins(64, 64)
        .unwrap()
        .into_iter()
        .map(|(y0, x0)| PlacedPatch { y0, x0, values: constant.view() })
        .collect();
    let mut acc = StitchAccumulator::new((64, 64), (16, 16), 2, 1e-8).unwrap();
    acc.accumulate(&placed).unwrap();
    let out = acc.finalize();
    let mut worst: f64 = 0.0;
    for ((y, x), &cov) in out.covered.indexed_iter() {
        let interior = (1..63).contains(&y) && (1..63).contains(&x);
        if interior {
            check(cov, format!("interior pixel ({y},{x}) uncovered"))?;
        }
        if cov {
            worst = worst.max((out.values[[y, x]] - c).abs());
        }
    }
    check(worst <= 1e-12, format!("max |out - c| = {worst:.3e}"))?;
    let ring = out.covered.iter().filter(|&&v| !v).count();
    Ok(format!("max |out - c| {worst:.1e}, interior covered, {ring} border pixels uncovered"))
}

// 3 ---------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let w = hann_window(4);
    for (a, b) in w.iter().zip([0.0, 0.75, 0.75, 0.0]) {
        check((a - b).abs() <= 1e-12, format!("w(.;4) = {w:?}"))?;
    }
    for n in 2..=64 {
        let w = hann_window(n);
        check(w[0].abs() <= 1e-12 && w[n - 1].abs() <= 1e-12, format!("nonzero endpoint at N={n}"))?;
        for (i, &v) in w.iter().enumerate() {
            let oracle = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos());
            check((v - oracle).abs() <= 1e-12, format!("N={n} n={i}: {v} vs {oracle}"))?;
        }
    }
    Ok("w(.;4) = (0, .75, .75, 0); endpoints zero for N in 2..=64".into())
}

// 4 ---------------------------------------------------------------------

fn sorted_sample_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4096;
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let (pa, pb) = (0.3 + 2.5 * rng.gen::<f64>(), 0.3 + 2.5 * rng.gen::<f64>());
        let shift = 0.2 * rng.gen::<f64>();
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powf(pa)).collect();
        let b: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>().powf(pb) * (1.0 - shift) + shift).min(1.0)).collect();
        let oracle = sorted_sample_w1(&a, &b);
        let exact = wasserstein_exact(&a, &b).map_err(|e| e.to_string())?;
        check((exact - oracle).abs() <= 1e-12, format!("pair {k}: exact {exact} vs sorted {oracle}"))?;
        let hist = wasserstein_hist(&a, &b, 256).map_err(|e| e.to_string())?;
        worst = worst.max((hist - oracle).abs());
    }
    check(worst <= 1.0 / 256.0, format!("max |hist - exact| = {worst:.3e}"))?;

    let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    check(wasserstein_hist(&a, &a, 256).unwrap() == 0.0, "identical inputs give nonzero distance")?;

    let delta = 0.1;
    let base: Vec<f64> = (0..n).map(|_| 0.8 * rng.gen::<f64>()).collect();
    let moved: Vec<f64> = (0..n).map(|_| 0.8 * rng.gen::<f64>() + delta).collect();
    let w = wasserstein_hist(&base, &moved, 256).unwrap();
    check((w - delta).abs() <= 0.1 * delta, format!("shifted W1 {w} vs delta {delta}"))?;
    Ok(format!("max |hist - exact| {worst:.2e} <= {:.2e}; shift {delta} -> {w:.4}", 1.0 / 256.0))
}

// 5 ---------------------------------------------------------------------

fn haversine_oracle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let r = 6371.0088;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((lon2 - lon1).to_radians() / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().asin()
}

fn brute_force(field: &Array2<f64>, grid: &Grid, edges: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let nb = edges.len() - 1;
    let (mut sum, mut cnt) = (vec![0.0; nb], vec![0usize; nb]);
    let px: Vec<(usize, usize)> = (0..grid.n_lat()).flat_map(|i| (0..grid.n_lon()).map(move |j| (i, j))).collect();
    for a in 0..px.len() {
        for b in a + 1..px.len() {
            let (p, q) = (px[a], px[b]);
            let d = haversine_oracle(grid.lat()[p.0], grid.lon()[p.1], grid.lat()[q.0], grid.lon()[q.1]);
            if let Some(k) = (0..nb).find(|&k| d > edges[k] && d <= edges[k + 1]) {
                sum[k] += 0.5 * (field[p] - field[q]).powi(2);
                cnt[k] += 1;
            }
        }
    }
    (sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect(), cnt)
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let grid = Grid::regular(30.0, -0.5, 10, 40.0, 0.5, 10).unwrap();
    let field =
        Array2::from_shape_fn((10, 10), |(y, x)| (y as f64 * 0.3).sin() + 0.1 * x as f64 + normal.sample(&mut rng));
    let bins = DistanceBins::equal_width(24, 600.0).unwrap();
    let pairs = sample_pairs(&grid, None, 30_000, 600.0, 11).unwrap();
    check(pairs.exhaustive, "10x10 sample is not exhaustive")?;
    let est = empirical_variogram(field.view(), &pairs, &bins).unwrap();
    let (oracle, counts) = brute_force(&field, &grid, bins.edges());
    check(est.pair_counts == counts, format!("pair counts {:?} vs {:?}", est.pair_counts, counts))?;
    let worst = est.gamma.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(worst <= 1e-12, format!("max |gamma - brute force| = {worst:.3e}"))?;

    // white noise with unit variance is flat at 1
    let noise_grid = Grid::regular(36.0, -0.1, 64, 40.0, 0.1, 64).unwrap();
    let noise = Array2::from_shape_fn((64, 64), |_| normal.sample(&mut rng));
    let flat_bins = DistanceBins::equal_width(8, 400.0).unwrap();
    let pairs = sample_pairs(&noise_grid, None, 30_000, 400.0, 12).unwrap();
    check(pairs.pairs.len() == 30_000, format!("only {} pairs drawn", pairs.pairs.len()))?;
    let flat = empirical_variogram(noise.view(), &pairs, &flat_bins).unwrap();
    let (lo, hi) = flat.gamma.iter().fold((f64::MAX, f64::MIN), |(l, h), &g| (l.min(g), h.max(g)));
    check(
        lo >= 0.85 && hi <= 1.15,
        format!("white-noise gamma range [{lo:.3}, {hi:.3}], counts {:?}", flat.pair_counts),
    )?;

    // noiseless spherical curve
    let (c0, c1, a) = (0.1, 0.9, 300.0);
    let centers = bins.centers();
    let curve = VariogramEstimate {
        bin_edges: bins.edges().to_vec(),
        gamma: centers.iter().map(|&h| c0 + c1 * spherical_shape(h, a)).collect(),
        bin_centers: centers,
        pair_counts: vec![100; 24],
    };
    let fit = fit_spherical(&curve).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    check(
        rel(fit.nugget, c0) <= 0.01 && rel(fit.partial_sill, c1) <= 0.01 && rel(fit.range_km, a) <= 0.01,
        format!("fit {:?}", fit),
    )?;
    within(t0.elapsed(), 10.0)?;
    Ok(format!(
        "brute-force dev {worst:.1e}; white noise in [{lo:.3}, {hi:.3}]; fit ({:.4}, {:.4}, {:.2} km); {:.2}s",
        fit.nugget,
        fit.partial_sill,
        fit.range_km,
        t0.elapsed().as_secs_f64()
    ))
}

// 6 ---------------------------------------------------------------------

/// Lag-k coefficient from regressing the demeaned series on its first k
/// lags, with the series zero-padded so every product term is kept.
fn regression_pacf(series: &[f64], k: usize) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut z = vec![0.0; k];
    z.extend(series.iter().map(|v| v - mean));
    z.extend(std::iter::repeat_n(0.0, k));
    let rows = n + k;
    let x = DMatrix::from_fn(rows, k, |r, j| z[r + k - 1 - j]);
    let y = DVector::from_fn(rows, |r, _| z[r + k]);
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).expect("regular");
    beta[k - 1]
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 5000;
    let mut s = Vec::with_capacity(n);
    let mut prev = 0.0;
    for _ in 0..n + 200 {
        prev = 0.6 * prev + normal.sample(&mut rng);
        s.push(prev);
    }
    let series = &s[200..];
    let res = acf_pacf(series, 5).unwrap();
    check((0.57..=0.63).contains(&res.acf[0]), format!("ACF(1) = {}", res.acf[0]))?;
    let band = 2.0 / (n as f64).sqrt();
    for k in 2..=5 {
        check(res.pacf[k - 1].abs() <= band, format!("PACF({k}) = {} outside ±{band:.4}", res.pacf[k - 1]))?;
    }
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        worst = worst.max((res.pacf[k - 1] - regression_pacf(series, k)).abs());
    }
    check(worst <= 1e-6, format!("Durbin-Levinson vs regression {worst:.3e}"))?;
    let rho = autocorrelation(series, 1).unwrap();
    Ok(format!("ACF(1) {:.4}; PACF(2..5) within ±{band:.4}; DL vs regression {worst:.1e}", rho[1]))
}

// 7 ---------------------------------------------------------------------

fn random_stack(rng: &mut ChaCha8Rng, days: usize) -> FieldStack {
    let v = Array3::from_shape_fn((days, 6, 7), |_| rng.gen_range(0.05..2.0));
    FieldStack::new(
        v,
        (0..days as u64).map(day).collect(),
        Grid::regular(30.0, -0.1, 6, 40.0, 0.1, 7).unwrap(),
        Space::Log10,
        "z",
    )
    .unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = random_stack(&mut rng, 5);
    let same = eval_metrics(&truth, &truth, None).unwrap().mean;
    for (name, v) in [
        ("r2", same.r2),
        ("nse", same.nse),
        ("kge", same.kge),
        ("r", same.r),
        ("beta", same.beta),
        ("gamma", same.gamma_ratio),
    ] {
        let v = v.ok_or(format!("{name} undefined"))?;
        check((v - 1.0).abs() <= 1e-12, format!("{name} = {v}"))?;
    }
    check(same.mae.abs() <= 1e-12 && same.rmse.abs() <= 1e-12, "nonzero error for perfect prediction")?;

    let doubled = truth.values().mapv(|v| 2.0 * v);
    let k = metrics_for_day(doubled.index_axis(ndarray::Axis(0), 0), truth.day(0), None).unwrap().kge.unwrap();
    check((k - (1.0 - 2f64.sqrt())).abs() <= 1e-9, format!("KGE(2 true) = {k}"))?;

    for _ in 0..100 {
        let (a, b) = (random_stack(&mut rng, 3), random_stack(&mut rng, 3));
        let rep = eval_metrics(&a, &b, None).unwrap();
        for d in &rep.per_day {
            check(d.metrics.r2 == d.metrics.nse, "R2 and NSE differ")?;
        }
        check(rep.mean.r2 == rep.mean.nse, "mean R2 and NSE differ")?;
    }
    Ok(format!("perfect scores exact; KGE(2 true) = {k:.12}; R2 == NSE on 100 stacks"))
}

// 8 ---------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let src = Grid::regular(36.0, -0.5, 12, 38.0, 0.625, 12).unwrap();
    // target strictly inside the second-to-last source nodes on each side
    let dst = Grid::regular(35.4, -0.0625, 64, 38.7, 0.0625, 84).unwrap();
    let plan = RegridPlan::bicubic(&src, &dst).unwrap();

    let constant = Array2::from_elem((12, 12), 3.25);
    let out = plan.apply(constant.view()).unwrap();
    let dev_c = out.iter().map(|v| (v - 3.25).abs()).fold(0.0, f64::max);
    check(dev_c <= 1e-10, format!("constant deviation {dev_c:.3e}"))?;

    let ramp = |lat: f64, lon: f64| 0.4 - 1.3 * lat + 0.7 * lon;
    let field = Array2::from_shape_fn((12, 12), |(y, x)| ramp(src.lat()[y], src.lon()[x]));
    let out = plan.apply(field.view()).unwrap();
    let mut dev_r: f64 = 0.0;
    for ((y, x), v) in out.indexed_iter() {
        dev_r = dev_r.max((v - ramp(dst.lat()[y], dst.lon()[x])).abs());
    }
    check(dev_r <= 1e-10, format!("ramp deviation {dev_r:.3e}"))?;

    let fine = Grid::regular(1.0, -1.0, 2, 0.0, 1.0, 2).unwrap();
    let cell = Grid::new(vec![0.5], vec![0.5]).unwrap();
    let avg = block_average(ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]).view(), &fine, &cell).unwrap();
    check(avg[[0, 0]] == 2.5, format!("block average {}", avg[[0, 0]]))?;
    Ok(format!("constant {dev_c:.1e}, ramp {dev_r:.1e}, 2x2 block mean 2.5"))
}

// 9 ---------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let days: Vec<NaiveDate> = (0..40).map(day).collect();
    let split = split_days(&days, SplitRatios::default()).unwrap();
    let field = Array2::from_shape_fn((32, 32), |(y, x)| (y * 32 + x) as f64);
    let spec = PatchSpec::training();
    let mut patches = Vec::new();
    for &d in &days {
        patches.extend(extract_patches(field.view(), d, &spec).unwrap());
    }
    let mut split_days_seen = 0usize;
    for seed in 0..100u64 {
        let streams = group_by_day(patches.clone(), &split, seed).unwrap();
        let days_of = |role: Role| streams.stream(role).map(|p| p.day).collect::<std::collections::BTreeSet<_>>();
        let (tr, va, te) = (days_of(Role::Train), days_of(Role::Val), days_of(Role::Test));
        split_days_seen += tr.intersection(&va).count() + tr.intersection(&te).count() + va.intersection(&te).count();
        for role in [Role::Train, Role::Val, Role::Test] {
            for g in streams.groups(role) {
                check(g.patches.iter().all(|p| p.day == g.day), "group mixes days")?;
                check(split.role_of(g.day) == Some(role), "day routed to wrong role")?;
            }
        }
    }
    check(split_days_seen == 0, format!("{split_days_seen} days split across streams"))?;

    let n292: Vec<NaiveDate> = (0..292).map(day).collect();
    let s: SplitAssignment = split_days(&n292, SplitRatios::default()).unwrap();
    let sizes = (s.train().len(), s.val().len(), s.test().len());
    check(sizes == (233, 29, 30), format!("split sizes {sizes:?}"))?;
    check(s.train().last() < s.val().first() && s.val().last() < s.test().first(), "split not chronological")?;
    Ok(format!("100 seeds, 0 split days; n=292 -> {}/{}/{}", sizes.0, sizes.1, sizes.2))
}

// 10 --------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let t0 = Instant::now();
    let out = run_demo(&DemoConfig::default()).map_err(|e| e.to_string())?;
    let s = &out.summary;
    let r2 = |m: &downscale_core::diagnostics::MetricsReport| m.r2.unwrap_or(f64::NEG_INFINITY);
    let (ridge, pers, drv) = (r2(&s.heldout.ridge), r2(&s.heldout.persistence), r2(&s.heldout.coarse_driver));
    check(ridge >= 0.95, format!("ridge held-out R2 {ridge:.4} < 0.95"))?;
    check(ridge > pers && ridge > drv, format!("ridge {ridge:.4} vs persistence {pers:.4}, driver {drv:.4}"))?;
    let c = &s.rollout;
    check(c.prediction.n_pairs[0] == 9, format!("{} lag-1 pairs in a 10-day horizon", c.prediction.n_pairs[0]))?;
    check(
        c.prediction_between(1),
        format!(
            "lag-1 RMSE d/p/t {:.4}/{:.4}/{:.4}, R2 d/p/t {:.4}/{:.4}/{:.4}",
            c.driver.rmse[0], c.prediction.rmse[0], c.truth.rmse[0], c.driver.r2[0], c.prediction.r2[0], c.truth.r2[0]
        ),
    )?;
    within(t0.elapsed(), 60.0)?;
    Ok(format!(
        "held-out R2 ridge {ridge:.4} / persistence {pers:.4} / driver {drv:.4}; lag-1 RMSE {:.4} in [{:.4}, {:.4}], R2 {:.4} in [{:.4}, {:.4}]; {:.1}s",
        c.prediction.rmse[0],
        c.driver.rmse[0].min(c.truth.rmse[0]),
        c.driver.rmse[0].max(c.truth.rmse[0]),
        c.prediction.r2[0],
        c.driver.r2[0].min(c.truth.r2[0]),
        c.driver.r2[0].max(c.truth.r2[0]),
        t0.elapsed().as_secs_f64()
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("stitch partition invariance", criterion_1),
        ("stitch constant fidelity", criterion_2),
        ("hann window", criterion_3),
        ("wasserstein oracle agreement", criterion_4),
        ("variogram oracle", criterion_5),
        ("acf/pacf", criterion_6),
        ("metric identities", criterion_7),
        ("regrid", criterion_8),
        ("leakage guard", criterion_9),
        ("end-to-end synthetic world", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
