//! Output bookkeeping shared by every subcommand: input hashing, report
//! writing and the run manifest.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use downscale_core::raster::{mask_path, meta_path};

/// How a subcommand failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, missing or malformed inputs (exit 2).
    Invalid(String),
    /// Anything else (exit 1).
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Internal(_) => 1,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<downscale_core::Error> for Failure {
    fn from(e: downscale_core::Error) -> Self {
        match e {
            downscale_core::Error::External(_) => Failure::Internal(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

pub fn invalid(msg: impl Display) -> Failure {
    Failure::Invalid(msg.to_string())
}

pub fn internal(msg: impl Display) -> Failure {
    Failure::Internal(msg.to_string())
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn digest(path: &Path) -> std::io::Result<FileDigest> {
    let data = fs::read(path)?;
    let hash = Sha256::digest(&data);
    Ok(FileDigest {
        path: path.to_string_lossy().into_owned(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
        bytes: data.len() as u64,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    threads: Option<usize>,
    parameters: &'a serde_json::Value,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

/// Collects the files one subcommand reads and writes.
pub struct Run {
    command: &'static str,
    threads: Option<usize>,
    parameters: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Run {
    pub fn new(command: &'static str, threads: Option<usize>, parameters: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command,
            threads,
            parameters: serde_json::to_value(parameters).map_err(internal)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Records an input file plus its sidecar and mask when present.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if !path.exists() {
            return Err(invalid(format!("input {} does not exist", path.display())));
        }
        self.inputs.push(digest(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?);
        if path.extension().is_some_and(|e| e == "npy") {
            for side in [meta_path(path), mask_path(path)] {
                if side.exists() {
                    self.inputs.push(digest(&side).map_err(internal)?);
                }
            }
        }
        Ok(())
    }

    /// Records a written file (and its sidecar/mask when it is an array).
    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(digest(path).map_err(internal)?);
        if path.extension().is_some_and(|e| e == "npy") {
            for side in [meta_path(path), mask_path(path)] {
                if side.exists() {
                    self.outputs.push(digest(&side).map_err(internal)?);
                }
            }
        }
        Ok(())
    }

    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> CliResult<()> {
        ensure_parent(path)?;
        let text = serde_json::to_string_pretty(value).map_err(internal)?;
        fs::write(path, text + "\n").map_err(|e| internal(format!("{}: {e}", path.display())))?;
        self.output(path)
    }

    pub fn write_csv<R: Serialize>(&mut self, path: &Path, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| internal(format!("{}: {e}", path.display())))?;
        for r in rows {
            w.serialize(r).map_err(internal)?;
        }
        w.flush().map_err(internal)?;
        drop(w);
        self.output(path)
    }

    /// `<stem>.json` plus `<stem>.csv` next to `out`.
    pub fn write_report<R: Serialize>(
        &mut self,
        out: &Path,
        report: &impl Serialize,
        rows: impl IntoIterator<Item = R>,
    ) -> CliResult<()> {
        self.write_json(&out.with_extension("json"), report)?;
        self.write_csv(&out.with_extension("csv"), rows)
    }

    /// Writes `manifest.json` into `dir` (or to `explicit`).
    pub fn finish(self, dir: &Path, explicit: Option<&Path>) -> CliResult<PathBuf> {
        let path = explicit.map_or_else(|| dir.join("manifest.json"), Path::to_path_buf);
        let manifest = Manifest {
            tool: "downscale",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            threads: self.threads,
            parameters: &self.parameters,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        ensure_parent(&path)?;
        let text = serde_json::to_string_pretty(&manifest).map_err(internal)?;
        fs::write(&path, text + "\n").map_err(|e| internal(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| internal(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

/// Directory that holds `path`, `.` for bare file names.
pub fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
