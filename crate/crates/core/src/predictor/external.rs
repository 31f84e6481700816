//! File-exchange bridge to an out-of-process patch model.
//!
//! Per day the bridge writes `inputs_<date>.npy` (N × C × H × W, f32) and
//! `patches.json`, runs the command, and reads `preds_<date>.npy`
//! (N × H × W or N × 1 × H × W). Arguments may use the placeholders
//! `{inputs}`, `{index}`, `{output}` and `{date}`; the same paths are also
//! exported as `DOWNSCALE_INPUTS`, `DOWNSCALE_INDEX` and `DOWNSCALE_OUTPUT`.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::PatchModel;
use crate::error::{Error, Result};
use crate::exchange::{PatchIndex, PatchRow};
use crate::npy::{read_npy, write_f64_as_f32};
use crate::pipeline::Patch;
use crate::raster::Space;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalCommand {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub work_dir: PathBuf,
}

impl PatchModel for ExternalCommand {
    fn predict_patches(&self, day: NaiveDate, image: (usize, usize), patches: &[Patch]) -> Result<Vec<Array2<f64>>> {
        let Some(first) = patches.first() else {
            return Ok(Vec::new());
        };
        let program =
            self.command.first().ok_or_else(|| Error::InvalidParameter("external command is empty".into()))?;
        fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        let (c, h, w) = first.values.dim();
        let inputs = self.work_dir.join(format!("inputs_{day}.npy"));
        let index = self.work_dir.join("patches.json");
        let output = self.work_dir.join(format!("preds_{day}.npy"));

        let mut flat = Vec::with_capacity(patches.len() * c * h * w);
        for p in patches {
            if p.values.dim() != (c, h, w) {
                return Err(Error::ShapeMismatch("patches differ in shape".into()));
            }
            flat.extend(p.values.iter().copied());
        }
        write_f64_as_f32(&inputs, &[patches.len(), c, h, w], &flat)?;
        PatchIndex {
            image_height: image.0,
            image_width: image.1,
            patch_height: h,
            patch_width: w,
            stride: 0,
            space: Space::Standardized,
            channels: first.channels.to_vec(),
            rows: patches.iter().map(|p| PatchRow { day: p.day, y0: p.y0, x0: p.x0 }).collect(),
        }
        .write(&index)?;
        if output.exists() {
            fs::remove_file(&output).map_err(|e| Error::io(&output, e))?;
        }

        let sub = |a: &String| {
            a.replace("{inputs}", &inputs.to_string_lossy())
                .replace("{index}", &index.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
                .replace("{date}", &day.to_string())
        };
        let status = Command::new(sub(program))
            .args(self.command[1..].iter().map(sub))
            .env("DOWNSCALE_INPUTS", &inputs)
            .env("DOWNSCALE_INDEX", &index)
            .env("DOWNSCALE_OUTPUT", &output)
            .status()
            .map_err(|e| Error::External(format!("cannot run {program:?}: {e}")))?;
        if !status.success() {
            return Err(Error::External(format!("{program:?} exited with {status}")));
        }

        let arr = read_npy(&output)?;
        let ok = match arr.shape.as_slice() {
            [n, hh, ww] => *n == patches.len() && (*hh, *ww) == (h, w),
            [n, 1, hh, ww] => *n == patches.len() && (*hh, *ww) == (h, w),
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "predictions have shape {:?}, expected [{}, {h}, {w}]",
                arr.shape,
                patches.len()
            )));
        }
        let data = arr.to_f64();
        Ok(data.chunks(h * w).map(|chunk| Array2::from_shape_vec((h, w), chunk.to_vec()).expect("sized")).collect())
    }
}
