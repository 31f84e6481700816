//! Patch index files shared by the `patch`/`stitch` commands and the
//! external-predictor exchange.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Space;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRow {
    pub day: NaiveDate,
    pub y0: usize,
    pub x0: usize,
}

/// Describes the rows of a patch array: row `k` of the NPY payload is the
/// patch whose placement is `rows[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchIndex {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub stride: usize,
    pub space: Space,
    #[serde(default)]
    pub channels: Vec<String>,
    pub rows: Vec<PatchRow>,
}

impl PatchIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let idx: PatchIndex =
            serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))?;
        idx.validate()?;
        Ok(idx)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.y0 + self.patch_height > self.image_height || r.x0 + self.patch_width > self.image_width {
                return Err(Error::ShapeMismatch(format!(
                    "patch at ({}, {}) leaves the {}x{} image",
                    r.y0, r.x0, self.image_height, self.image_width
                )));
            }
        }
        Ok(())
    }

    /// Distinct days in first-appearance order.
    pub fn days(&self) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.day) {
                out.push(r.day);
            }
        }
        out
    }
}
