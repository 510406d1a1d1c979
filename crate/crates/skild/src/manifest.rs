//! Run and dataset manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skild_core::PixelField;

use crate::config::{read_json, ScheduleConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Where the variance spectrum of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum S0Provenance {
    Spectrum {
        path: String,
        sha256: String,
    },
    PowerLaw {
        path: String,
        sha256: String,
        #[serde(rename = "C")]
        c: f64,
        k0_sq: f64,
        a: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub schema_version: u32,
    pub command_line: Vec<String>,
    /// SHA-256 of the schedule file bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<S0Provenance>,
    #[serde(default)]
    pub options: serde_json::Map<String, serde_json::Value>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
    pub artifacts: Vec<String>,
}

/// Timer started when a command begins; turns into a [`RunManifest`].
#[derive(Debug)]
pub struct RunClock {
    started: u64,
    instant: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started: unix_now(),
            instant: Instant::now(),
        }
    }

    pub fn finish(&self, command_line: &[String], artifacts: Vec<String>) -> RunManifest {
        RunManifest {
            tool: format!("skild {}", env!("CARGO_PKG_VERSION")),
            schema_version: SCHEMA_VERSION,
            command_line: command_line.to_vec(),
            config_hash: None,
            seed: None,
            schedule: None,
            s0: None,
            options: serde_json::Map::new(),
            started_unix: self.started,
            finished_unix: unix_now(),
            elapsed_seconds: self.instant.elapsed().as_secs_f64(),
            artifacts,
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// A directory of equally shaped SKFT fields. File names are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub files: Vec<String>,
    pub shape: Vec<usize>,
    pub generator: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
}

/// A dataset manifest together with the directory its files live in.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    /// Accepts a manifest file or a directory holding `manifest.json`.
    pub fn open(input: &Path) -> Result<Self> {
        let path = if input.is_dir() {
            input.join(MANIFEST_FILE)
        } else {
            input.to_path_buf()
        };
        let manifest: DatasetManifest = read_json(&path)?;
        if manifest.files.is_empty() {
            return Err(Error::Config {
                path,
                field: "files".into(),
                reason: "lists no files".into(),
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn paths(&self) -> impl Iterator<Item = PathBuf> + '_ {
        self.manifest.files.iter().map(|f| self.root.join(f))
    }

    /// Loads file `i`, checking it against the declared shape.
    pub fn load(&self, i: usize) -> Result<PixelField> {
        let path = self.root.join(&self.manifest.files[i]);
        let tensor = Tensor::load(&path)?;
        if tensor.dims() != self.manifest.shape.as_slice() {
            return Err(Error::format(
                &path,
                format!(
                    "dims {:?} differ from the manifest shape {:?}",
                    tensor.dims(),
                    self.manifest.shape
                ),
            ));
        }
        tensor.field().map_err(|e| Error::format(&path, e))
    }

    pub fn len(&self) -> usize {
        self.manifest.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.files.is_empty()
    }
}
