use std::path::Path;
use std::process::{Command, Output};

use chrono::{Days, NaiveDate};
use ndarray::Array3;

use downscale_core::raster::{load_stack, save_stack, FieldStack, Grid, Space};

fn downscale(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_downscale")).args(args).current_dir(cwd).output().expect("spawn downscale")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn write_stack(path: &Path, days: usize, rows: usize, cols: usize) -> FieldStack {
    let start = NaiveDate::from_ymd_opt(2006, 6, 1).unwrap();
    let values = Array3::from_shape_fn((days, rows, cols), |(d, y, x)| {
        ((d * 7 + y * 3 + x) as f64 * 0.37).sin() + 0.01 * y as f64
    });
    let grid = Grid::regular(40.0, -0.0625, rows, -100.0, 0.0625, cols).unwrap();
    let dates = (0..days).map(|d| start + Days::new(d as u64)).collect();
    let s = FieldStack::new(values, dates, grid, Space::Standardized, "t").unwrap();
    save_stack(&s, path).unwrap();
    s
}

#[test]
fn unknown_flag_and_bad_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = downscale(&["eval", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = downscale(&["wd", "--x", "nope.npy", "--y", "nope.npy", "--out", "wd.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = downscale(&["--threads", "0", "demo"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    write_stack(&dir.path().join("a.npy"), 4, 16, 16);
    let out = downscale(&["split", "--src", "a.npy", "--season", "XYZ", "--out", "s.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identity_patches_stitch_back_to_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_stack(&dir.path().join("field.npy"), 3, 32, 40);
    ok(&downscale(
        &["patch", "--src", "field.npy", "--stride", "8", "--out", "p/patches.npy", "--index", "p/patches.json"],
        dir.path(),
    ));
    ok(&downscale(
        &[
            "stitch",
            "--patches",
            "p/patches.npy",
            "--index",
            "p/patches.json",
            "--h",
            "0",
            "--grid",
            "field.meta.json",
            "--out",
            "s/img.npy",
            "--mask-out",
            "s/cover.npy",
        ],
        dir.path(),
    ));
    let img = load_stack(dir.path().join("s/img.npy")).unwrap();
    assert_eq!(img.dates(), src.dates());
    assert_eq!(img.values().dim(), src.values().dim());
    let cover = std::fs::read(dir.path().join("s/cover.npy")).unwrap();
    let flags = &cover[cover.len() - img.values().len()..];
    // the taper vanishes on the outer edge only
    assert_eq!(flags.iter().filter(|&&c| c == 0).count(), 3 * (2 * 32 + 2 * 40 - 4));
    for ((a, b), &c) in img.values().iter().zip(src.values().iter()).zip(flags) {
        if c == 1 {
            // stored as f32 on both legs
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        } else {
            assert_eq!(*a, 0.0);
        }
    }

    let manifest: serde_json::Value = serde_json::from_slice(&read(dir.path().join("s/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "stitch");
    assert_eq!(manifest["parameters"]["halo"], 0);
    let outputs: Vec<&str> =
        manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(outputs.contains(&"s/img.npy") && outputs.contains(&"s/cover.npy"));
    for o in manifest["outputs"].as_array().unwrap() {
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
        let bytes = read(dir.path().join(o["path"].as_str().unwrap()));
        assert_eq!(o["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn split_roles_feed_patch_selection() {
    let dir = tempfile::tempdir().unwrap();
    // JJA 2006 with a full spring buffer
    let start = NaiveDate::from_ymd_opt(2006, 4, 17).unwrap();
    let n = (NaiveDate::from_ymd_opt(2006, 8, 31).unwrap() - start).num_days() as usize + 1;
    let values = Array3::from_elem((n, 16, 16), 0.5);
    let grid = Grid::regular(40.0, -0.0625, 16, -100.0, 0.0625, 16).unwrap();
    let dates: Vec<NaiveDate> = (0..n).map(|d| start + Days::new(d as u64)).collect();
    save_stack(&FieldStack::new(values, dates, grid, Space::Raw, "t").unwrap(), dir.path().join("f.npy")).unwrap();

    ok(&downscale(&["split", "--src", "f.npy", "--season", "JJA", "--out", "split.json"], dir.path()));
    let split: serde_json::Value = serde_json::from_slice(&read(dir.path().join("split.json"))).unwrap();
    // 92 target days: floor(73.6)=73 train, floor(9.2)=9 val, rest test
    assert_eq!(split["train"].as_array().unwrap().len(), 73);
    assert_eq!(split["val"].as_array().unwrap().len(), 9);
    assert_eq!(split["test"].as_array().unwrap().len(), 10);
    let csv = String::from_utf8(read(dir.path().join("split.csv"))).unwrap();
    assert_eq!(csv.lines().next(), Some("date,role"));

    ok(&downscale(
        &["patch", "--src", "f.npy", "--split", "split.json", "--role", "test", "--out", "t.npy", "--index", "t.json"],
        dir.path(),
    ));
    let index: serde_json::Value = serde_json::from_slice(&read(dir.path().join("t.json"))).unwrap();
    let rows = index["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    let test: Vec<&serde_json::Value> = split["test"].as_array().unwrap().iter().collect();
    assert!(rows.iter().all(|r| test.contains(&&r["day"])));
}

#[test]
fn demo_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("demo.toml"),
        "horizon_days = 8\nvariogram_pairs = 5000\n\n[world]\nfine_rows = 32\nfine_cols = 32\n",
    )
    .unwrap();
    ok(&downscale(&["--threads", "1", "demo", "--config", "demo.toml", "--out-dir", "a"], dir.path()));
    let out = downscale(&["--threads", "4", "demo", "--config", "demo.toml", "--out-dir", "b"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ridge"));
    for f in [
        "summary.json",
        "heldout.csv",
        "rollout_lags.csv",
        "ridge_eval.csv",
        "ridge.json",
        "predictor.toml",
        "rollout.npy",
    ] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
    let heldout = String::from_utf8(read(dir.path().join("a/heldout.csv"))).unwrap();
    assert_eq!(heldout.lines().count(), 4);

    // the written predictor config drives a standalone rollout
    ok(&downscale(&["demo", "--config", "demo.toml", "--out-dir", "c", "--world"], dir.path()));
    ok(&downscale(
        &[
            "rollout",
            "--config",
            "c/predictor.toml",
            "--fine",
            "c/world/fine_z.npy",
            "--drivers",
            "c/world/driver_z.npy",
            "--elevation",
            "c/world/elevation_fine.npy",
            "--start",
            "2007-08-31",
            "--days",
            "3",
            "--out",
            "r/pred.npy",
        ],
        dir.path(),
    ));
    let pred = load_stack(dir.path().join("r/pred.npy")).unwrap();
    assert_eq!(pred.values().dim().0, 3);
    assert!(pred.values().iter().all(|v| v.is_finite()));
}
