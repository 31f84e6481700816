//! Grid and field-stack containers, log/standardization transforms, and
//! the on-disk format (NPY payload plus a JSON sidecar).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;

/// Default flooring constant applied before taking log10, in raw units.
pub const DEFAULT_FLOOR_EPS: f64 = 1e-6;

/// Latitude/longitude centers of a rectilinear grid, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lat: Vec<f64>,
    lon: Vec<f64>,
}

impl Grid {
    pub fn new(lat: Vec<f64>, lon: Vec<f64>) -> Result<Self> {
        check_axis("lat", &lat)?;
        check_axis("lon", &lon)?;
        Ok(Self { lat, lon })
    }

    /// Regular grid starting at `(lat0, lon0)` with the given signed steps.
    pub fn regular(lat0: f64, dlat: f64, n_lat: usize, lon0: f64, dlon: f64, n_lon: usize) -> Result<Self> {
        let lat = (0..n_lat).map(|i| lat0 + dlat * i as f64).collect();
        let lon = (0..n_lon).map(|j| lon0 + dlon * j as f64).collect();
        Self::new(lat, lon)
    }

    pub fn lat(&self) -> &[f64] {
        &self.lat
    }

    pub fn lon(&self) -> &[f64] {
        &self.lon
    }

    pub fn n_lat(&self) -> usize {
        self.lat.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lon.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_lat(), self.n_lon())
    }

    /// Mean absolute center spacing along latitude, `None` for a single row.
    pub fn lat_step(&self) -> Option<f64> {
        mean_step(&self.lat)
    }

    pub fn lon_step(&self) -> Option<f64> {
        mean_step(&self.lon)
    }
}

fn mean_step(axis: &[f64]) -> Option<f64> {
    if axis.len() < 2 {
        return None;
    }
    Some((axis[axis.len() - 1] - axis[0]).abs() / (axis.len() - 1) as f64)
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidGrid(format!("{name} axis is empty")));
    }
    if let Some(v) = axis.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} contains non-finite value {v}")));
    }
    if axis.len() > 1 {
        let ascending = axis[1] > axis[0];
        let monotone = axis.windows(2).all(|w| if ascending { w[1] > w[0] } else { w[1] < w[0] });
        if !monotone {
            return Err(Error::InvalidGrid(format!("{name} is not strictly monotone")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Raw,
    Log10,
    Standardized,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Raw => "raw",
            Space::Log10 => "log10",
            Space::Standardized => "standardized",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A day × lat × lon stack of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    values: Array3<f64>,
    dates: Vec<NaiveDate>,
    grid: Grid,
    space: Space,
    var_name: String,
    valid: Option<Array2<bool>>,
}

impl FieldStack {
    pub fn new(
        values: Array3<f64>,
        dates: Vec<NaiveDate>,
        grid: Grid,
        space: Space,
        var_name: impl Into<String>,
    ) -> Result<Self> {
        Self::with_mask(values, dates, grid, space, var_name, None)
    }

    /// Builds a stack with an optional static validity mask (true = valid).
    /// Non-finite values are only accepted at pixels the mask marks invalid.
    pub fn with_mask(
        values: Array3<f64>,
        dates: Vec<NaiveDate>,
        grid: Grid,
        space: Space,
        var_name: impl Into<String>,
        valid: Option<Array2<bool>>,
    ) -> Result<Self> {
        let (nd, ny, nx) = values.dim();
        if nd != dates.len() || (ny, nx) != grid.shape() {
            return Err(Error::ShapeMismatch(format!(
                "values {:?} vs {} dates on {}x{} grid",
                values.dim(),
                dates.len(),
                grid.n_lat(),
                grid.n_lon()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Calendar(format!("dates not strictly increasing at {}", w[1])));
        }
        if let Some(m) = &valid {
            if m.dim() != (ny, nx) {
                return Err(Error::ShapeMismatch(format!("mask {:?} vs grid {ny}x{nx}", m.dim())));
            }
        }
        for (index, (&v, (_, y, x))) in values.iter().zip(ndarray::indices((nd, ny, nx))).enumerate() {
            let covered = valid.as_ref().is_some_and(|m| !m[[y, x]]);
            if !v.is_finite() && !covered {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { values, dates, grid, space, var_name: var_name.into(), valid })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn day(&self, t: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), t)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn var_name(&self) -> &str {
        &self.var_name
    }

    pub fn valid(&self) -> Option<&Array2<bool>> {
        self.valid.as_ref()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[[y, x]])
    }

    /// Same metadata, new values and space. Values must keep the shape.
    pub(crate) fn derive(&self, values: Array3<f64>, space: Space) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            dates: self.dates.clone(),
            grid: self.grid.clone(),
            space,
            var_name: self.var_name.clone(),
            valid: self.valid.clone(),
        }
    }

    /// Sub-stack for the given day indices, in the order given.
    pub fn select_days(&self, days: &[usize]) -> Result<Self> {
        if let Some(&bad) = days.iter().find(|&&d| d >= self.n_days()) {
            return Err(Error::InvalidParameter(format!("day index {bad} out of range")));
        }
        let values = self.values.select(Axis(0), days);
        let dates = days.iter().map(|&d| self.dates[d]).collect();
        Self::with_mask(values, dates, self.grid.clone(), self.space, self.var_name.clone(), self.valid.clone())
    }

    /// Sub-stack restricted to the given dates (all must be present).
    pub fn select_dates(&self, dates: &[NaiveDate]) -> Result<Self> {
        let idx = dates
            .iter()
            .map(|d| {
                self.date_index(*d).ok_or_else(|| Error::DateMismatch(format!("{d} not present in {}", self.var_name)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_days(&idx)
    }

    fn require(&self, expected: Space) -> Result<()> {
        if self.space != expected {
            return Err(Error::WrongSpace { expected: expected.name(), found: self.space.name() });
        }
        Ok(())
    }
}

/// `log10(max(v, floor_eps))` elementwise. Requires raw space.
pub fn to_log10(stack: &FieldStack, floor_eps: f64) -> Result<FieldStack> {
    stack.require(Space::Raw)?;
    if !(floor_eps > 0.0) {
        return Err(Error::InvalidParameter(format!("floor_eps must be > 0, got {floor_eps}")));
    }
    let values = stack.values.mapv(|v| v.max(floor_eps).log10());
    Ok(stack.derive(values, Space::Log10))
}

/// Inverse of [`to_log10`] (up to the flooring, which is not invertible).
pub fn from_log10(stack: &FieldStack) -> Result<FieldStack> {
    stack.require(Space::Log10)?;
    let values = stack.values.mapv(|v| 10f64.powf(v));
    Ok(stack.derive(values, Space::Raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: f64,
    pub std: f64,
    pub floor_eps: f64,
}

impl StandardizationParams {
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean and population std over every valid pixel of the train days.
pub fn fit_standardizer(stack: &FieldStack, train_days: &[usize]) -> Result<StandardizationParams> {
    fit_standardizer_pooled(&[stack], train_days)
}

/// Pools pixels of several log10 stacks sharing one calendar, e.g. the
/// regridded coarse driver and the fine target.
pub fn fit_standardizer_pooled(stacks: &[&FieldStack], train_days: &[usize]) -> Result<StandardizationParams> {
    if train_days.is_empty() {
        return Err(Error::Empty("no train days".into()));
    }
    if stacks.is_empty() {
        return Err(Error::Empty("no stacks to pool".into()));
    }
    let mut days = train_days.to_vec();
    days.sort_unstable();
    days.dedup();

    let mut samples = Vec::new();
    for stack in stacks {
        stack.require(Space::Log10)?;
        if let Some(&bad) = days.iter().find(|&&d| d >= stack.n_days()) {
            return Err(Error::InvalidParameter(format!(
                "train day {bad} outside {} ({} days)",
                stack.var_name,
                stack.n_days()
            )));
        }
        for &d in &days {
            let day = stack.day(d);
            for ((y, x), &v) in day.indexed_iter() {
                if stack.is_valid(y, x) && v.is_finite() {
                    samples.push(v);
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Empty("train days contain no valid pixels".into()));
    }
    // sorting makes the pooled moments independent of day and pixel order
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::ZeroVariance("pooled train pixels are constant".into()));
    }
    Ok(StandardizationParams { mean, std, floor_eps: DEFAULT_FLOOR_EPS })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Forward maps log10 → standardized, inverse maps standardized → log10.
pub fn standardize(stack: &FieldStack, params: &StandardizationParams, direction: Direction) -> Result<FieldStack> {
    match direction {
        Direction::Forward => {
            stack.require(Space::Log10)?;
            Ok(stack.derive(stack.values.mapv(|v| params.forward(v)), Space::Standardized))
        }
        Direction::Inverse => {
            stack.require(Space::Standardized)?;
            Ok(stack.derive(stack.values.mapv(|z| params.inverse(z)), Space::Log10))
        }
    }
}

/// JSON sidecar stored next to each NPY file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    #[serde(default)]
    pub dates: Vec<NaiveDate>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    #[serde(default = "default_space")]
    pub space: Space,
    #[serde(default)]
    pub var_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

fn default_space() -> Space {
    Space::Raw
}

impl Meta {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.lat.clone(), self.lon.clone())
    }
}

/// `a.npy` → `a.meta.json`.
pub fn meta_path(npy_path: &Path) -> PathBuf {
    sibling(npy_path, "meta.json")
}

/// `a.npy` → `a.mask.npy`.
pub fn mask_path(npy_path: &Path) -> PathBuf {
    sibling(npy_path, "mask.npy")
}

fn sibling(npy_path: &Path, suffix: &str) -> PathBuf {
    let stem = npy_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    npy_path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))
}

pub fn write_meta(path: &Path, meta: &Meta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a 3D stack and its sidecar. A `<name>.mask.npy` next to the file,
/// when present, marks valid pixels (nonzero = valid).
pub fn load_stack(path: impl AsRef<Path>) -> Result<FieldStack> {
    let path = path.as_ref();
    let arr = npy::read_npy(path)?;
    let meta = read_meta(&meta_path(path))?;
    if arr.shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3D stack, got shape {:?}", arr.shape)));
    }
    let grid = meta.grid()?;
    let expected = [meta.dates.len(), grid.n_lat(), grid.n_lon()];
    if arr.shape != expected {
        return Err(Error::ShapeMismatch(format!("payload shape {:?} but metadata implies {:?}", arr.shape, expected)));
    }
    let values = Array3::from_shape_vec((expected[0], expected[1], expected[2]), arr.to_f64())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let valid = load_mask(&mask_path(path), grid.shape())?;
    FieldStack::with_mask(values, meta.dates, grid, meta.space, meta.var_name, valid)
}

fn load_mask(path: &Path, shape: (usize, usize)) -> Result<Option<Array2<bool>>> {
    if !path.exists() {
        return Ok(None);
    }
    let arr = npy::read_npy(path)?;
    if arr.shape != [shape.0, shape.1] {
        return Err(Error::ShapeMismatch(format!("mask shape {:?} vs grid {:?}", arr.shape, shape)));
    }
    Ok(Some(Array2::from_shape_vec(shape, arr.to_bool()).map_err(|e| Error::ShapeMismatch(e.to_string()))?))
}

/// Writes values as little-endian float32 plus the sidecar (and mask, if any).
pub fn save_stack(stack: &FieldStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (d, y, x) = stack.values.dim();
    let data: Vec<f64> = stack.values.iter().copied().collect();
    npy::write_f64_as_f32(path, &[d, y, x], &data)?;
    write_meta(
        &meta_path(path),
        &Meta {
            dates: stack.dates.clone(),
            lat: stack.grid.lat.clone(),
            lon: stack.grid.lon.clone(),
            space: stack.space,
            var_name: stack.var_name.clone(),
            units: None,
        },
    )?;
    if let Some(m) = &stack.valid {
        let bytes: Vec<u8> = m.iter().map(|&b| u8::from(b)).collect();
        npy::write_u8(mask_path(path), &[y, x], &bytes)?;
    }
    Ok(())
}

/// Loads a static 2D field (e.g. elevation) with its sidecar.
pub fn load_static(path: impl AsRef<Path>) -> Result<(Array2<f64>, Grid)> {
    let path = path.as_ref();
    let arr = npy::read_npy(path)?;
    let meta = read_meta(&meta_path(path))?;
    let grid = meta.grid()?;
    if arr.shape != [grid.n_lat(), grid.n_lon()] {
        return Err(Error::ShapeMismatch(format!("payload shape {:?} but grid is {:?}", arr.shape, grid.shape())));
    }
    let values = Array2::from_shape_vec(grid.shape(), arr.to_f64()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok((values, grid))
}

pub fn save_static(values: &Array2<f64>, grid: &Grid, var_name: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<f64> = values.iter().copied().collect();
    npy::write_f64_as_f32(path, &[values.nrows(), values.ncols()], &data)?;
    write_meta(
        &meta_path(path),
        &Meta {
            dates: Vec::new(),
            lat: grid.lat.clone(),
            lon: grid.lon.clone(),
            space: Space::Raw,
            var_name: var_name.to_string(),
            units: None,
        },
    )
}
