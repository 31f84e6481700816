//! Coarse-to-fine bicubic interpolation and fine-to-target block averaging.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{FieldStack, Grid};

/// Keys cubic-convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Target points may sit at most this many source cells outside the
/// outermost source centers; their stencils replicate the edge rows.
pub const CLAMP_TOLERANCE_CELLS: f64 = 0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four source indices and weights along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStencil {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
enum PlanKind {
    Bicubic { rows: Vec<AxisStencil>, cols: Vec<AxisStencil> },
    BlockMean { rows: Vec<Vec<usize>>, cols: Vec<Vec<usize>> },
}

/// Precomputed mapping from a source grid onto a target grid. Both methods
/// are separable, so stencils are stored per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RegridPlan {
    source: Grid,
    target: Grid,
    kind: PlanKind,
}

impl RegridPlan {
    pub fn bicubic(source: &Grid, target: &Grid) -> Result<Self> {
        let rows = target.lat().iter().map(|&c| axis_stencil(source.lat(), c, "lat")).collect::<Result<Vec<_>>>()?;
        let cols = target.lon().iter().map(|&c| axis_stencil(source.lon(), c, "lon")).collect::<Result<Vec<_>>>()?;
        Ok(Self { source: source.clone(), target: target.clone(), kind: PlanKind::Bicubic { rows, cols } })
    }

    /// Cell edges sit at midpoints between target centers; the outer cells
    /// extend half a step past the outermost centers. A target axis with a
    /// single center takes every fine sample along that axis.
    pub fn block_mean(fine: &Grid, target: &Grid) -> Result<Self> {
        let rows = axis_members(fine.lat(), target.lat(), "lat")?;
        let cols = axis_members(fine.lon(), target.lon(), "lon")?;
        for (r, members) in rows.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyCell { row: r, col: 0 });
            }
        }
        for (c, members) in cols.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyCell { row: 0, col: c });
            }
        }
        Ok(Self { source: fine.clone(), target: target.clone(), kind: PlanKind::BlockMean { rows, cols } })
    }

    pub fn source(&self) -> &Grid {
        &self.source
    }

    pub fn target(&self) -> &Grid {
        &self.target
    }

    /// Full 4×4 stencil of target pixel (i, j) as ((row, col), weight) pairs.
    /// `None` for block-mean plans.
    pub fn stencil(&self, i: usize, j: usize) -> Option<Vec<((usize, usize), f64)>> {
        match &self.kind {
            PlanKind::Bicubic { rows, cols } => {
                let (r, c) = (rows[i], cols[j]);
                let mut out = Vec::with_capacity(16);
                for a in 0..4 {
                    for b in 0..4 {
                        out.push(((r.index[a], c.index[b]), r.weight[a] * c.weight[b]));
                    }
                }
                Some(out)
            }
            PlanKind::BlockMean { .. } => None,
        }
    }

    pub fn apply(&self, field: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if field.dim() != self.source.shape() {
            return Err(Error::ShapeMismatch(format!(
                "field {:?} vs source grid {:?}",
                field.dim(),
                self.source.shape()
            )));
        }
        let (ny, nx) = self.target.shape();
        let mut out = Array2::zeros((ny, nx));
        match &self.kind {
            PlanKind::Bicubic { rows, cols } => {
                out.axis_iter_mut(Axis(0)).into_par_iter().zip(rows.par_iter()).for_each(|(mut row_out, rs)| {
                    for (o, cs) in row_out.iter_mut().zip(cols) {
                        let mut acc = 0.0;
                        for a in 0..4 {
                            let mut inner = 0.0;
                            for b in 0..4 {
                                inner += cs.weight[b] * field[[rs.index[a], cs.index[b]]];
                            }
                            acc += rs.weight[a] * inner;
                        }
                        *o = acc;
                    }
                });
            }
            PlanKind::BlockMean { rows, cols } => {
                out.axis_iter_mut(Axis(0)).into_par_iter().zip(rows.par_iter()).for_each(|(mut row_out, rm)| {
                    for (o, cm) in row_out.iter_mut().zip(cols) {
                        let mut sum = 0.0;
                        for &r in rm {
                            for &c in cm {
                                sum += field[[r, c]];
                            }
                        }
                        *o = sum / (rm.len() * cm.len()) as f64;
                    }
                });
            }
        }
        Ok(out)
    }

    /// Applies the plan to every day; the result lives on the target grid.
    pub fn apply_stack(&self, stack: &FieldStack) -> Result<FieldStack> {
        if stack.grid() != &self.source {
            return Err(Error::ShapeMismatch("stack grid differs from plan source grid".into()));
        }
        if stack.valid().is_some() {
            return Err(Error::InvalidParameter("regridding masked stacks is not supported".into()));
        }
        let (ny, nx) = self.target.shape();
        let mut values = Array3::zeros((stack.n_days(), ny, nx));
        for (t, mut day) in values.axis_iter_mut(Axis(0)).enumerate() {
            day.assign(&self.apply(stack.day(t))?);
        }
        FieldStack::new(values, stack.dates().to_vec(), self.target.clone(), stack.space(), stack.var_name())
    }
}

/// Separable Keys interpolation of one field.
pub fn bicubic_regrid(field: ArrayView2<'_, f64>, plan: &RegridPlan) -> Result<Array2<f64>> {
    plan.apply(field)
}

/// Mean of fine samples whose centers fall in each target cell.
pub fn block_average(fine: ArrayView2<'_, f64>, fine_grid: &Grid, target: &Grid) -> Result<Array2<f64>> {
    RegridPlan::block_mean(fine_grid, target)?.apply(fine)
}

/// Fractional index of `c` along a monotone axis, extrapolating linearly
/// from the outermost interval.
fn fractional_position(axis: &[f64], c: f64) -> f64 {
    let n = axis.len();
    if n == 1 {
        return 0.0;
    }
    let ascending = axis[1] > axis[0];
    // count of centers strictly "before" c in the axis direction
    let k = axis.partition_point(|&s| if ascending { s <= c } else { s >= c });
    let lo = k.clamp(1, n - 1) - 1;
    let (s0, s1) = (axis[lo], axis[lo + 1]);
    lo as f64 + (c - s0) / (s1 - s0)
}

fn axis_stencil(axis: &[f64], c: f64, name: &str) -> Result<AxisStencil> {
    let n = axis.len();
    let p = fractional_position(axis, c);
    if n > 1 && (p < -CLAMP_TOLERANCE_CELLS || p > (n - 1) as f64 + CLAMP_TOLERANCE_CELLS) {
        return Err(Error::OutsideSource(format!("{name} = {c} lies {p:.3} cells along a {n}-center source axis")));
    }
    let base = p.floor();
    let t = p - base;
    let base = base as isize;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    Ok(AxisStencil {
        index: [clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)],
        weight: [keys_kernel(1.0 + t), keys_kernel(t), keys_kernel(1.0 - t), keys_kernel(2.0 - t)],
    })
}

fn axis_members(fine: &[f64], target: &[f64], name: &str) -> Result<Vec<Vec<usize>>> {
    let nt = target.len();
    if nt == 1 {
        return Ok(vec![(0..fine.len()).collect()]);
    }
    let fine_step = (fine[fine.len() - 1] - fine[0]).abs() / (fine.len().max(2) - 1) as f64;
    let target_step = (target[nt - 1] - target[0]).abs() / (nt - 1) as f64;
    if fine.len() < 2 || fine_step >= target_step {
        return Err(Error::InvalidGrid(format!(
            "{name}: fine spacing {fine_step} is not finer than target spacing {target_step}"
        )));
    }
    let ascending = target[1] > target[0];
    // edges in ascending coordinate order
    let mut centers: Vec<f64> = target.to_vec();
    if !ascending {
        centers.reverse();
    }
    let mut edges = Vec::with_capacity(nt + 1);
    edges.push(centers[0] - 0.5 * (centers[1] - centers[0]));
    for w in centers.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(centers[nt - 1] + 0.5 * (centers[nt - 1] - centers[nt - 2]));

    let mut members = vec![Vec::new(); nt];
    for (f, &c) in fine.iter().enumerate() {
        if c < edges[0] || c >= edges[nt] {
            continue;
        }
        let k = edges.partition_point(|&e| e <= c) - 1;
        let cell = if ascending { k } else { nt - 1 - k };
        members[cell].push(f);
    }
    Ok(members)
}
