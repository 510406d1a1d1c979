//! JSON configuration: schedule specs, power-law parameter files, presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use skild_core::schedule::{ScheduleFamily, ScheduleSpec};
use skild_core::spectrum::{PowerLaw, PowerLawFit};

use crate::error::{Error, Result};

/// Bumped whenever a config file layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// Shipped schedule presets, addressable as `preset:<name>`.
pub const PRESETS: [(&str, &str); 6] = [
    ("cifar-linear-best", include_str!("../presets/cifar-linear-best.json")),
    ("cifar-loglinear-best", include_str!("../presets/cifar-loglinear-best.json")),
    ("imnet256-4x", include_str!("../presets/imnet256-4x.json")),
    ("imnet128-4x", include_str!("../presets/imnet128-4x.json")),
    ("imnet128-8x", include_str!("../presets/imnet128-8x.json")),
    ("ising-128", include_str!("../presets/ising-128.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    LogLinear,
}

/// On-disk schedule spec. `theta` is required by the linear family only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub lambda_i: f64,
    pub lambda_f: f64,
    pub k_c: f64,
    #[serde(rename = "N")]
    pub n: u64,
}

impl ScheduleConfig {
    /// Range-checks every field; errors name the offending JSON key.
    pub fn to_spec(&self) -> Result<ScheduleSpec, (String, String)> {
        let n = usize::try_from(self.n).map_err(|_| ("N".to_string(), format!("{} is too large", self.n)))?;
        let (family, theta) = match (self.family, self.theta) {
            (Family::Linear, Some(theta)) => (ScheduleFamily::Linear, theta),
            (Family::Linear, None) => {
                return Err(("theta".into(), "required for the linear family".into()));
            }
            (Family::LogLinear, theta) => (ScheduleFamily::LogLinear, theta.unwrap_or(0.0)),
        };
        ScheduleSpec::new(family, self.lambda_i, self.lambda_f, theta, self.k_c, n).map_err(|e| match e {
            skild_core::Error::InvalidParameter { name, reason } => (name.to_string(), reason),
            other => (".".into(), other.to_string()),
        })
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Self {
        let linear = spec.family() == ScheduleFamily::Linear;
        Self {
            family: if linear { Family::Linear } else { Family::LogLinear },
            theta: linear.then(|| spec.theta()),
            lambda_i: spec.lambda_i(),
            lambda_f: spec.lambda_f(),
            k_c: spec.k_c(),
            n: spec.n_steps() as u64,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// A schedule read from disk or a preset, with the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedSchedule {
    pub source: String,
    pub config: ScheduleConfig,
    pub spec: ScheduleSpec,
    pub bytes: Vec<u8>,
}

/// Loads `path`, or a shipped preset when given `preset:<name>`.
pub fn load_schedule(source: &str) -> Result<LoadedSchedule> {
    let (path, bytes) = match source.strip_prefix("preset:") {
        Some(name) => {
            let text = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                    Error::Usage(format!("unknown preset `{name}` (available: {})", names.join(", ")))
                })?;
            (PathBuf::from(source), text.as_bytes().to_vec())
        }
        None => {
            let path = PathBuf::from(source);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            (path, bytes)
        }
    };
    let config: ScheduleConfig = parse_json(&path, &bytes)?;
    let spec = config.to_spec().map_err(|(field, reason)| Error::Config {
        path: path.clone(),
        field,
        reason,
    })?;
    Ok(LoadedSchedule {
        source: source.to_string(),
        config,
        spec,
        bytes,
    })
}

/// Deserializes JSON, reporting the failing field's path.
pub fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_json(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("manifest types serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamErrors {
    #[serde(rename = "C")]
    pub c: f64,
    pub k0_sq: f64,
    pub a: f64,
}

/// `params.json`: power-law parameters, optionally with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub k0_sq: f64,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<ParamErrors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes_fitted: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0_sq_at_bound: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl PowerLawParams {
    pub fn from_fit(fit: &PowerLawFit) -> Self {
        Self {
            c: fit.law.c,
            k0_sq: fit.law.k0_sq,
            a: fit.law.a,
            stderr: Some(ParamErrors {
                c: fit.stderr.c,
                k0_sq: fit.stderr.k0_sq,
                a: fit.stderr.a,
            }),
            modes_fitted: Some(fit.modes_fitted),
            k0_sq_at_bound: Some(fit.k0_sq_at_bound),
            residual_norm: Some(fit.residual_norm),
            iterations: Some(fit.iterations),
        }
    }

    pub fn law(&self, path: &Path) -> Result<PowerLaw> {
        PowerLaw::new(self.c, self.k0_sq, self.a).map_err(|e| match e {
            skild_core::Error::InvalidParameter { name, reason } => Error::Config {
                path: path.to_path_buf(),
                field: name.to_string(),
                reason,
            },
            other => other.into(),
        })
    }
}
