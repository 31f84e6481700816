//! Statistical downscaling toolkit for daily gridded fields: raster I/O,
//! regridding, patch pipelines, overlap stitching, distribution and
//! structure diagnostics, and next-day predictors with rollout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exchange;
pub mod npy;
pub mod pipeline;
pub mod predictor;
pub mod raster;
pub mod regrid;
pub mod similarity;
pub mod stitch;
pub mod synthetic;

pub use error::{Error, Result};
