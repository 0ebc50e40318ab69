//! Run manifests: what a command was asked to do, what it read and wrote,
//! and how long each stage took.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phunet::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

/// Per-volume timing of `correct`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeTiming {
    pub input: PathBuf,
    pub slices: usize,
    pub ms: f64,
    /// Inference time of each slice, in slice order.
    pub slice_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; rerunning them reproduces the
    /// outputs.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock stage durations from a monotonic clock.
    pub timings: Vec<StageTiming>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volumes: Vec<VolumeTiming>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            args,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            volumes: Vec::new(),
        }
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.record(stage, t0);
        out
    }

    /// Records the time elapsed since `start` under `stage`.
    pub fn record(&mut self, stage: &str, start: Instant) {
        self.timings.push(StageTiming {
            stage: stage.into(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    pub fn stage_ms(&self, stage: &str) -> Option<f64> {
        self.timings.iter().find(|t| t.stage == stage).map(|t| t.ms)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|source| Error::Path {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Path {
            path: path.into(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Path {
        path: path.into(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Path {
        path: path.into(),
        source,
    })
}
