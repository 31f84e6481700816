//! Seasonal windows with lag buffers, chronological splits, sliding-window
//! patch extraction and day-grouped patch streams.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Datelike, Days, NaiveDate};
use ndarray::{s, Array3, ArrayView2, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PATCH_SIZE: usize = 16;
pub const TRAIN_STRIDE: usize = 8;
pub const INFERENCE_STRIDE: usize = 2;
pub const BUFFER_DAYS: u64 = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    DJF,
    MAM,
    JJA,
    SON,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::DJF, Season::MAM, Season::JJA, Season::SON];

    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::DJF,
            3..=5 => Season::MAM,
            6..=8 => Season::JJA,
            _ => Season::SON,
        }
    }

    pub fn of(date: NaiveDate) -> Season {
        Self::of_month(date.month())
    }

    /// Integer label used as a calendar channel (0..=3).
    pub fn index(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DJF" => Ok(Season::DJF),
            "MAM" => Ok(Season::MAM),
            "JJA" => Ok(Season::JJA),
            "SON" => Ok(Season::SON),
            other => Err(Error::InvalidParameter(format!("unknown season {other:?}"))),
        }
    }
}

/// One contiguous run of in-season days and the lag buffer preceding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonBlock {
    pub first: NaiveDate,
    pub last: NaiveDate,
    /// Up to 45 calendar days before `first`, clipped to the calendar start.
    pub buffer: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub season: Season,
    pub target_days: Vec<NaiveDate>,
    pub buffer_days: Vec<NaiveDate>,
    pub blocks: Vec<SeasonBlock>,
}

/// Collects every in-season day across all years of a contiguous daily
/// calendar. Buffer days provide lag context only; they are never targets.
pub fn build_season_windows(dates: &[NaiveDate], season: Season) -> Result<SeasonWindow> {
    if let Some(w) = dates.windows(2).find(|w| w[0].succ_opt() != Some(w[1])) {
        return Err(Error::Calendar(format!("calendar is not contiguous daily between {} and {}", w[0], w[1])));
    }
    let Some(&start) = dates.first() else {
        return Err(Error::Calendar("empty calendar".into()));
    };

    let mut blocks: Vec<SeasonBlock> = Vec::new();
    let mut target_days = Vec::new();
    for &d in dates.iter().filter(|d| Season::of(**d) == season) {
        match blocks.last_mut() {
            Some(b) if b.last.succ_opt() == Some(d) => b.last = d,
            _ => blocks.push(SeasonBlock { first: d, last: d, buffer: Vec::new() }),
        }
        target_days.push(d);
    }
    if blocks.is_empty() {
        return Err(Error::Calendar(format!("no {season} days in calendar {start}..")));
    }
    let mut buffer_days = Vec::new();
    for b in &mut blocks {
        let from = b.first - Days::new(BUFFER_DAYS);
        b.buffer = from.iter_days().take_while(|d| *d < b.first).filter(|d| *d >= start).collect();
        buffer_days.extend_from_slice(&b.buffer);
    }
    Ok(SeasonWindow { season, target_days, buffer_days, blocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let all = [train, val, test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("split ratios {all:?} must be in [0,1] and sum to 1")));
        }
        Ok(Self { train, val, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Deserialize)]
struct SplitFile {
    train: Vec<NaiveDate>,
    val: Vec<NaiveDate>,
    test: Vec<NaiveDate>,
}

impl TryFrom<SplitFile> for SplitAssignment {
    type Error = Error;

    fn try_from(f: SplitFile) -> Result<Self> {
        SplitAssignment::new(f.train, f.val, f.test)
    }
}

/// Chronological train/val/test partition of target days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SplitFile")]
pub struct SplitAssignment {
    train: Vec<NaiveDate>,
    val: Vec<NaiveDate>,
    test: Vec<NaiveDate>,
}

impl SplitAssignment {
    /// Rejects overlapping roles, unsorted lists and any train day that
    /// does not precede every val day (likewise val before test).
    pub fn new(train: Vec<NaiveDate>, val: Vec<NaiveDate>, test: Vec<NaiveDate>) -> Result<Self> {
        for (name, days) in [("train", &train), ("val", &val), ("test", &test)] {
            if days.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Split(format!("{name} days are not strictly increasing")));
            }
        }
        let mut seen = HashMap::new();
        for (role, days) in [(Role::Train, &train), (Role::Val, &val), (Role::Test, &test)] {
            for d in days {
                if let Some(prev) = seen.insert(*d, role) {
                    return Err(Error::Split(format!("{d} assigned to both {prev:?} and {role:?}")));
                }
            }
        }
        let ordered = |a: &[NaiveDate], b: &[NaiveDate]| match (a.last(), b.first()) {
            (Some(x), Some(y)) => x < y,
            _ => true,
        };
        if !ordered(&train, &val) || !ordered(&val, &test) || !ordered(&train, &test) {
            return Err(Error::Split("splits are not in chronological order".into()));
        }
        Ok(Self { train, val, test })
    }

    pub fn train(&self) -> &[NaiveDate] {
        &self.train
    }

    pub fn val(&self) -> &[NaiveDate] {
        &self.val
    }

    pub fn test(&self) -> &[NaiveDate] {
        &self.test
    }

    pub fn days(&self, role: Role) -> &[NaiveDate] {
        match role {
            Role::Train => &self.train,
            Role::Val => &self.val,
            Role::Test => &self.test,
        }
    }

    pub fn role_of(&self, day: NaiveDate) -> Option<Role> {
        [Role::Train, Role::Val, Role::Test].into_iter().find(|&r| self.days(r).binary_search(&day).is_ok())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Secondary day-level holdout inside the train role: the last
    /// `floor(fraction · n_train)` train days. Returns (fit days, holdout days).
    pub fn train_holdout(&self, fraction: f64) -> Result<(Vec<NaiveDate>, Vec<NaiveDate>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidParameter(format!("holdout fraction {fraction} must lie in [0, 1)")));
        }
        let n_hold = ((fraction * self.train.len() as f64) + 1e-9).floor() as usize;
        let cut = self.train.len() - n_hold;
        Ok((self.train[..cut].to_vec(), self.train[cut..].to_vec()))
    }
}

/// Minimum number of target days accepted by [`temporal_split`].
pub const MIN_SPLIT_DAYS: usize = 10;

/// First `floor(train·n)` days train, next `floor(val·n)` val, the rest test.
pub fn temporal_split(window: &SeasonWindow, ratios: SplitRatios) -> Result<SplitAssignment> {
    split_days(&window.target_days, ratios)
}

pub fn split_days(days: &[NaiveDate], ratios: SplitRatios) -> Result<SplitAssignment> {
    let n = days.len();
    if n < MIN_SPLIT_DAYS {
        return Err(Error::Split(format!("need at least {MIN_SPLIT_DAYS} target days, got {n}")));
    }
    // small guard so that e.g. 0.8 * 10 lands on 8 and not 7
    let count = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_train = count(ratios.train).min(n);
    let n_val = count(ratios.val).min(n - n_train);
    SplitAssignment::new(
        days[..n_train].to_vec(),
        days[n_train..n_train + n_val].to_vec(),
        days[n_train + n_val..].to_vec(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub halo: usize,
}

impl PatchSpec {
    pub fn new(height: usize, width: usize, stride: usize, halo: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("patch dimensions must be positive".into()));
        }
        if stride == 0 || stride > width || stride > height {
            return Err(Error::InvalidParameter(format!("stride {stride} must lie in 1..={}", width.min(height))));
        }
        if 2 * halo >= height.min(width) {
            return Err(Error::InvalidParameter(format!("halo {halo} leaves no core in a {height}x{width} patch")));
        }
        Ok(Self { height, width, stride, halo })
    }

    /// 16×16 patches at stride 8, no halo.
    pub fn training() -> Self {
        Self::new(PATCH_SIZE, PATCH_SIZE, TRAIN_STRIDE, 0).expect("valid")
    }

    /// 16×16 patches at stride 2 with halo `h`.
    pub fn inference(halo: usize) -> Result<Self> {
        Self::new(PATCH_SIZE, PATCH_SIZE, INFERENCE_STRIDE, halo)
    }

    fn check_image(&self, h_img: usize, w_img: usize) -> Result<()> {
        if h_img < self.height || w_img < self.width {
            return Err(Error::ShapeMismatch(format!(
                "image {h_img}x{w_img} smaller than patch {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Top-left corners on the stride lattice that keep the patch inside
    /// the image, row-major.
    pub fn origins(&self, h_img: usize, w_img: usize) -> Result<Vec<(usize, usize)>> {
        self.check_image(h_img, w_img)?;
        let ys: Vec<usize> = (0..=h_img - self.height).step_by(self.stride).collect();
        let xs: Vec<usize> = (0..=w_img - self.width).step_by(self.stride).collect();
        Ok(lattice(&ys, &xs))
    }

    /// Lattice origins plus, per axis, an origin flush with the far edge
    /// when the lattice does not reach it, so every pixel is inside some patch.
    pub fn covering_origins(&self, h_img: usize, w_img: usize) -> Result<Vec<(usize, usize)>> {
        self.check_image(h_img, w_img)?;
        let axis = |img: usize, size: usize| {
            let mut v: Vec<usize> = (0..=img - size).step_by(self.stride).collect();
            if *v.last().expect("non-empty") != img - size {
                v.push(img - size);
            }
            v
        };
        Ok(lattice(&axis(h_img, self.height), &axis(w_img, self.width)))
    }
}

fn lattice(ys: &[usize], xs: &[usize]) -> Vec<(usize, usize)> {
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
}

/// A channels × height × width window cut from one day.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub y0: usize,
    pub x0: usize,
    pub day: NaiveDate,
    pub values: Array3<f64>,
    pub channels: Arc<[String]>,
}

impl Patch {
    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    pub fn channel(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let c = self.channels.iter().position(|n| n == name)?;
        Some(self.values.slice(s![c, .., ..]))
    }
}

/// Single-channel patches on the stride lattice, row-major.
pub fn extract_patches(field: ArrayView2<'_, f64>, day: NaiveDate, spec: &PatchSpec) -> Result<Vec<Patch>> {
    let (h, w) = field.dim();
    let origins = spec.origins(h, w)?;
    let stacked = field.insert_axis(ndarray::Axis(0));
    extract_at(stacked, &["value".to_string()], day, spec, &origins, None)
}

/// Cuts multi-channel patches at the given origins. With a validity mask,
/// patches touching any invalid pixel are dropped.
pub fn extract_at(
    channels: ArrayView3<'_, f64>,
    names: &[String],
    day: NaiveDate,
    spec: &PatchSpec,
    origins: &[(usize, usize)],
    valid: Option<ArrayView2<'_, bool>>,
) -> Result<Vec<Patch>> {
    let (c, h, w) = channels.dim();
    if names.len() != c {
        return Err(Error::ShapeMismatch(format!("{} channel names for {c} channels", names.len())));
    }
    spec.check_image(h, w)?;
    let names: Arc<[String]> = names.into();
    let mut out = Vec::with_capacity(origins.len());
    for &(y0, x0) in origins {
        if y0 + spec.height > h || x0 + spec.width > w {
            return Err(Error::ShapeMismatch(format!("patch at ({y0},{x0}) leaves the {h}x{w} image")));
        }
        if let Some(m) = valid {
            if m.slice(s![y0..y0 + spec.height, x0..x0 + spec.width]).iter().any(|v| !v) {
                continue;
            }
        }
        out.push(Patch {
            y0,
            x0,
            day,
            values: channels.slice(s![.., y0..y0 + spec.height, x0..x0 + spec.width]).to_owned(),
            channels: Arc::clone(&names),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayGroup {
    pub day: NaiveDate,
    pub patches: Vec<Patch>,
}

/// Per-role patch streams in which every day's patches stay together.
#[derive(Debug, Clone, PartialEq)]
pub struct DayStreams {
    pub train: Vec<DayGroup>,
    pub val: Vec<DayGroup>,
    pub test: Vec<DayGroup>,
}

impl DayStreams {
    pub fn groups(&self, role: Role) -> &[DayGroup] {
        match role {
            Role::Train => &self.train,
            Role::Val => &self.val,
            Role::Test => &self.test,
        }
    }

    pub fn stream(&self, role: Role) -> impl Iterator<Item = &Patch> {
        self.groups(role).iter().flat_map(|g| g.patches.iter())
    }

    /// Fixed-size batches over one role's stream; the last may be short.
    pub fn batches(&self, role: Role, batch_size: usize) -> Vec<Vec<&Patch>> {
        let all: Vec<&Patch> = self.stream(role).collect();
        all.chunks(batch_size.max(1)).map(<[&Patch]>::to_vec).collect()
    }
}

/// Routes each day's patches to its split role, then shuffles day order and
/// the patches inside each day with a seeded RNG. The output order depends
/// only on the patch set and the seed, not on the input order.
pub fn group_by_day(patches: Vec<Patch>, split: &SplitAssignment, seed: u64) -> Result<DayStreams> {
    let mut by_day: HashMap<NaiveDate, Vec<Patch>> = HashMap::new();
    for p in patches {
        if split.role_of(p.day).is_none() {
            return Err(Error::Split(format!("patch day {} is outside every split", p.day)));
        }
        by_day.entry(p.day).or_default().push(p);
    }
    let mut days: Vec<NaiveDate> = by_day.keys().copied().collect();
    days.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut streams = DayStreams { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for role in [Role::Train, Role::Val, Role::Test] {
        let mut groups: Vec<DayGroup> = days
            .iter()
            .filter(|d| split.role_of(**d) == Some(role))
            .map(|&day| {
                let mut patches = by_day.remove(&day).expect("day present");
                patches.sort_by_key(|p| (p.y0, p.x0));
                DayGroup { day, patches }
            })
            .collect();
        groups.shuffle(&mut rng);
        for g in &mut groups {
            g.patches.shuffle(&mut rng);
        }
        match role {
            Role::Train => streams.train = groups,
            Role::Val => streams.val = groups,
            Role::Test => streams.test = groups,
        }
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn calendar(a: NaiveDate, b: NaiveDate) -> Vec<NaiveDate> {
        a.iter_days().take_while(|d| *d <= b).collect()
    }

    #[test]
    fn jja_targets_span_all_years() {
        let cal = calendar(ymd(2005, 1, 1), ymd(2007, 12, 31));
        let w = build_season_windows(&cal, Season::JJA).unwrap();
        assert_eq!(w.target_days.len(), 3 * 92);
        assert!(w.target_days.iter().all(|d| (6..=8).contains(&d.month())));
        assert_eq!(w.blocks.len(), 3);
        for y in 2005..=2007 {
            assert!(w.target_days.contains(&ymd(y, 6, 1)));
            assert!(w.target_days.contains(&ymd(y, 8, 31)));
        }
    }

    #[test]
    fn djf_buffer_is_45_days_before_block() {
        let cal = calendar(ymd(2005, 6, 1), ymd(2006, 6, 1));
        let w = build_season_windows(&cal, Season::DJF).unwrap();
        assert_eq!(w.blocks.len(), 1);
        let b = &w.blocks[0];
        assert_eq!(b.first, ymd(2005, 12, 1));
        assert_eq!(b.last, ymd(2006, 2, 28));
        assert_eq!(b.buffer.len(), 45);
        assert_eq!(b.buffer[0], ymd(2005, 10, 17));
        assert_eq!(*b.buffer.last().unwrap(), ymd(2005, 11, 30));
        assert!(b.buffer.iter().all(|d| !w.target_days.contains(d)));
    }

    #[test]
    fn buffer_clipped_at_calendar_start() {
        let cal = calendar(ymd(2005, 5, 20), ymd(2005, 9, 30));
        let w = build_season_windows(&cal, Season::JJA).unwrap();
        assert_eq!(w.buffer_days.first(), Some(&ymd(2005, 5, 20)));
        assert_eq!(w.buffer_days.len(), 12);
    }

    #[test]
    fn missing_season_and_gaps_error() {
        let cal = calendar(ymd(2005, 1, 1), ymd(2005, 4, 30));
        assert!(matches!(build_season_windows(&cal, Season::JJA), Err(Error::Calendar(_))));
        let gappy = vec![ymd(2005, 6, 1), ymd(2005, 6, 3)];
        assert!(matches!(build_season_windows(&gappy, Season::JJA), Err(Error::Calendar(_))));
    }

    #[test]
    fn split_counts() {
        let d0 = ymd(2005, 6, 1);
        for (n, want) in [(10, (8, 1, 1)), (292, (233, 29, 30)), (11, (8, 1, 2)), (100, (80, 10, 10))] {
            let days: Vec<_> = d0.iter_days().take(n).collect();
            let s = split_days(&days, SplitRatios::default()).unwrap();
            assert_eq!((s.train().len(), s.val().len(), s.test().len()), want, "n={n}");
            assert!(s.train().last() < s.val().first());
            assert!(s.val().last() < s.test().first());
        }
        let few: Vec<_> = d0.iter_days().take(9).collect();
        assert!(split_days(&few, SplitRatios::default()).is_err());
    }

    #[test]
    fn split_rejects_shared_or_misordered_days() {
        let d = |i| ymd(2005, 6, 1) + Days::new(i);
        assert!(SplitAssignment::new(vec![d(0), d(1)], vec![d(1)], vec![d(2)]).is_err());
        assert!(SplitAssignment::new(vec![d(3)], vec![d(1)], vec![d(4)]).is_err());
        assert!(SplitAssignment::new(vec![d(0)], vec![d(1)], vec![d(2)]).is_ok());
        let json = r#"{"train":["2005-06-01"],"val":["2005-06-01"],"test":[]}"#;
        assert!(serde_json::from_str::<SplitAssignment>(json).is_err());
    }

    #[test]
    fn patch_lattice_counts() {
        let spec = PatchSpec::training();
        assert_eq!(spec.origins(16, 16).unwrap(), vec![(0, 0)]);
        let o = spec.origins(32, 32).unwrap();
        assert_eq!(o.len(), 9);
        assert_eq!(o[0], (0, 0));
        assert_eq!(o[8], (16, 16));
        let infer = PatchSpec::new(16, 16, 2, 2).unwrap();
        assert_eq!(infer.origins(24, 24).unwrap().len(), 25);
        assert!(matches!(spec.origins(15, 32), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn covering_origins_reach_far_edge() {
        let spec = PatchSpec::new(16, 16, 8, 0).unwrap();
        let o = spec.covering_origins(20, 16).unwrap();
        assert_eq!(o, vec![(0, 0), (4, 0)]);
        assert_eq!(spec.covering_origins(32, 32).unwrap(), spec.origins(32, 32).unwrap());
    }

    #[test]
    fn patch_spec_validation() {
        assert!(PatchSpec::new(16, 16, 0, 0).is_err());
        assert!(PatchSpec::new(16, 16, 17, 0).is_err());
        assert!(PatchSpec::new(16, 16, 2, 8).is_err());
        assert!(PatchSpec::new(16, 16, 2, 7).is_ok());
    }

    #[test]
    fn patches_copy_source_pixels() {
        let field = Array2::from_shape_fn((32, 40), |(y, x)| (y * 100 + x) as f64);
        let patches = extract_patches(field.view(), ymd(2005, 6, 1), &PatchSpec::training()).unwrap();
        assert_eq!(patches.len(), 3 * 4);
        for p in &patches {
            for ((_, y, x), v) in p.values.indexed_iter() {
                assert_eq!(*v, field[[p.y0 + y, p.x0 + x]]);
            }
        }
    }

    #[test]
    fn masked_patches_dropped() {
        let field = Array3::zeros((1, 32, 32));
        let mut mask = Array2::from_elem((32, 32), true);
        mask[[0, 0]] = false;
        let spec = PatchSpec::training();
        let origins = spec.origins(32, 32).unwrap();
        let p = extract_at(field.view(), &["v".into()], ymd(2005, 6, 1), &spec, &origins, Some(mask.view())).unwrap();
        assert_eq!(p.len(), 8);
    }
}
