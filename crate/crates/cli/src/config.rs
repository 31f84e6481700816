//! TOML predictor configuration for `rollout`.
//!
//! ```toml
//! kind = "ridge_patch"      # persistence | coarse_driver | ridge_patch | external
//! t_lag = 5
//! lambda = 1e-4             # ridge penalty when fitting
//! halo = 2
//! stride = 2
//! eps = 1e-8
//! model = "ridge.json"      # fitted ridge coefficients; else fit on `split`
//! split = "split.json"
//!
//! [clamp]                   # default: min/max of the training targets
//! lo = -3.0
//! hi = 3.0
//! knee = 0.05
//!
//! [external]
//! command = ["python3", "model.py", "{inputs}", "{output}"]
//! work_dir = "exchange"
//!
//! [calendar]                # default: spans the fine and driver dates
//! origin = "2005-04-17"
//! first_year = 2005
//! last_year = 2007
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use downscale_core::predictor::{Calendar, ExternalCommand, PredictorKind, DEFAULT_KNEE, DEFAULT_LAMBDA};

use crate::run::{invalid, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_knee")]
    pub knee: f64,
}

fn default_knee() -> f64 {
    DEFAULT_KNEE
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub t_lag: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub halo: Option<usize>,
    pub stride: Option<usize>,
    pub eps: Option<f64>,
    pub model: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub clamp: Option<ClampConfig>,
    pub external: Option<ExternalCommand>,
    pub calendar: Option<Calendar>,
}

impl PredictorConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = crate::run::dir_of(path);
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [cfg.model.as_mut(), cfg.split.as_mut(), cfg.external.as_mut().map(|e| &mut e.work_dir)]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }
}
