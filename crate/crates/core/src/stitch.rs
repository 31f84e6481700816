//! Reassembly of overlapping patch predictions into one image.
//!
//! Each patch keeps only its core (a halo of `h` pixels is dropped on every
//! side that does not touch the image boundary), tapers the core with a
//! separable Hann window, and adds `W·Ỹ` into a weighted-sum image `S` and
//! `W` into a weight image `Z`. The stitched image is `S / max(Z, eps)`.
//! Because accumulation is additive, the result does not depend on how the
//! patches are batched.

use std::f64::consts::PI;
use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_HALO: usize = 2;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Patches per partial accumulator in [`StitchAccumulator::accumulate_par`].
/// Fixed so the reduction tree does not depend on the thread count.
const PAR_CHUNK: usize = 64;

/// Per-side halo widths for one patch; a side touching the image edge has 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaloRule {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl HaloRule {
    pub fn new(y0: usize, x0: usize, patch: (usize, usize), image: (usize, usize), h: usize) -> Self {
        let (ph, pw) = patch;
        let (ih, iw) = image;
        Self {
            top: if y0 == 0 { 0 } else { h },
            bottom: if y0 + ph == ih { 0 } else { h },
            left: if x0 == 0 { 0 } else { h },
            right: if x0 + pw == iw { 0 } else { h },
        }
    }
}

/// Retained core of a patch, in image coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreRegion {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub halo: HaloRule,
}

impl CoreRegion {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }
}

pub fn core_region(y0: usize, x0: usize, patch: (usize, usize), image: (usize, usize), h: usize) -> Result<CoreRegion> {
    let (ph, pw) = patch;
    let (ih, iw) = image;
    if y0 + ph > ih || x0 + pw > iw {
        return Err(Error::ShapeMismatch(format!("patch {ph}x{pw} at ({y0},{x0}) leaves the {ih}x{iw} image")));
    }
    let halo = HaloRule::new(y0, x0, patch, image, h);
    if halo.top + halo.bottom >= ph || halo.left + halo.right >= pw {
        return Err(Error::InvalidParameter(format!("halo {h} leaves an empty core in a {ph}x{pw} patch")));
    }
    Ok(CoreRegion { rows: y0 + halo.top..y0 + ph - halo.bottom, cols: x0 + halo.left..x0 + pw - halo.right, halo })
}

/// `w(n; N) = ½(1 − cos(2πn/(N−1)))`, with `w(0; 1) = 1`.
pub fn hann(n: usize, len: usize) -> f64 {
    if len <= 1 {
        return 1.0;
    }
    0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos())
}

pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| hann(n, len)).collect()
}

/// Outer product of row and column Hann windows.
pub fn taper_weights(n_rows: usize, n_cols: usize) -> Array2<f64> {
    let wr = hann_window(n_rows);
    let wc = hann_window(n_cols);
    Array2::from_shape_fn((n_rows, n_cols), |(i, j)| wr[i] * wc[j])
}

/// One predicted patch placed at its top-left corner.
#[derive(Debug, Clone, Copy)]
pub struct PlacedPatch<'a> {
    pub y0: usize,
    pub x0: usize,
    pub values: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchAccumulator {
    sum: Array2<f64>,
    weight: Array2<f64>,
    patch: (usize, usize),
    halo: usize,
    eps: f64,
}

/// Finalized image plus coverage (`true` where `Z ≥ eps`).
#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    pub values: Array2<f64>,
    pub covered: Array2<bool>,
}

impl Stitched {
    pub fn all_covered(&self) -> bool {
        self.covered.iter().all(|&c| c)
    }
}

impl StitchAccumulator {
    pub fn new(image: (usize, usize), patch: (usize, usize), halo: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        if patch.0 == 0 || patch.1 == 0 || patch.0 > image.0 || patch.1 > image.1 {
            return Err(Error::ShapeMismatch(format!("patch {patch:?} does not fit image {image:?}")));
        }
        if 2 * halo >= patch.0.min(patch.1) {
            return Err(Error::InvalidParameter(format!("halo {halo} leaves no core in patch {patch:?}")));
        }
        Ok(Self { sum: Array2::zeros(image), weight: Array2::zeros(image), patch, halo, eps })
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.sum.dim()
    }

    pub fn sum(&self) -> &Array2<f64> {
        &self.sum
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    fn check(&self, p: &PlacedPatch<'_>) -> Result<CoreRegion> {
        if p.values.dim() != self.patch {
            return Err(Error::ShapeMismatch(format!("patch values {:?} vs spec {:?}", p.values.dim(), self.patch)));
        }
        core_region(p.y0, p.x0, self.patch, self.image_dims(), self.halo)
    }

    fn add_one(sum: &mut Array2<f64>, weight: &mut Array2<f64>, core: &CoreRegion, p: &PlacedPatch<'_>) {
        let w = taper_weights(core.n_rows(), core.n_cols());
        let local = p
            .values
            .slice(s![core.halo.top..core.halo.top + core.n_rows(), core.halo.left..core.halo.left + core.n_cols()]);
        let region = s![core.rows.clone(), core.cols.clone()];
        Zip::from(sum.slice_mut(region)).and(weight.slice_mut(region)).and(&w).and(&local).for_each(|s, z, &wi, &y| {
            *s += wi * y;
            *z += wi;
        });
    }

    /// Adds one batch in order. Validates the whole batch before touching
    /// the accumulators, so a failed call leaves them unchanged.
    pub fn accumulate(&mut self, batch: &[PlacedPatch<'_>]) -> Result<()> {
        let cores = batch.iter().map(|p| self.check(p)).collect::<Result<Vec<_>>>()?;
        for (p, core) in batch.iter().zip(&cores) {
            Self::add_one(&mut self.sum, &mut self.weight, core, p);
        }
        Ok(())
    }

    /// Parallel variant: fixed-size chunks of the batch are summed into
    /// partial images which are then merged in chunk order. The result is
    /// independent of the thread count; it may differ from [`accumulate`]
    /// in the last bits because the summation tree differs.
    ///
    /// [`accumulate`]: StitchAccumulator::accumulate
    pub fn accumulate_par(&mut self, batch: &[PlacedPatch<'_>]) -> Result<()> {
        let cores = batch.iter().map(|p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let dims = self.image_dims();
        let partials: Vec<(Array2<f64>, Array2<f64>)> = batch
            .par_chunks(PAR_CHUNK)
            .zip(cores.par_chunks(PAR_CHUNK))
            .map(|(ps, cs)| {
                let mut sum = Array2::zeros(dims);
                let mut weight = Array2::zeros(dims);
                for (p, c) in ps.iter().zip(cs) {
                    Self::add_one(&mut sum, &mut weight, c, p);
                }
                (sum, weight)
            })
            .collect();
        for (s, z) in partials {
            self.sum += &s;
            self.weight += &z;
        }
        Ok(())
    }

    pub fn finalize(&self) -> Stitched {
        let eps = self.eps;
        let values = Zip::from(&self.sum).and(&self.weight).map_collect(|&s, &z| s / z.max(eps));
        let covered = self.weight.mapv(|z| z >= eps);
        Stitched { values, covered }
    }
}

/// Stitches a full set of patches in one batch.
pub fn stitch(
    image: (usize, usize),
    patch: (usize, usize),
    patches: &[PlacedPatch<'_>],
    halo: usize,
    eps: f64,
) -> Result<Stitched> {
    let mut acc = StitchAccumulator::new(image, patch, halo, eps)?;
    acc.accumulate(patches)?;
    Ok(acc.finalize())
}
