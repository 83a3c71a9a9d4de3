//! TOML run configuration.
//!
//! ```toml
//! [model]
//! system = "may_nowak_chemotaxis"
//! kappa = 1.0
//! conversion = { kind = "saturated", alpha = 0.5 }
//!
//! [grid]
//! geometry = "interval"
//! length = 1.0
//! cells = 128
//!
//! [stepper]
//! t_end = 50.0
//!
//! [diagnostics]
//! sample_interval = 0.5
//!
//! [initial]
//! family = "random_bump"
//! mass = 1.0
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use mnchemo::experiments::{ConversionFamily, RunSpec, SweepSpec};
use mnchemo::{Geometry, GridSpec, InitialData, ModelSpec, StepperConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Interval,
    Rectangle,
    RadialDisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub geometry: GeometryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ly: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub cells: usize,
    /// Cells along y, rectangles only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells_y: Option<usize>,
}

fn require(value: Option<f64>, key: &str, geometry: &str) -> Result<f64, ConfigError> {
    value.ok_or_else(|| ConfigError::Invalid(format!("grid.{key} is required for geometry \"{geometry}\"")))
}

impl GridSection {
    pub fn to_spec(&self) -> Result<GridSpec, ConfigError> {
        let stray = |keys: &[(&str, bool)], geometry: &str| -> Result<(), ConfigError> {
            match keys.iter().find(|(_, present)| *present) {
                Some((k, _)) => Err(ConfigError::Invalid(format!(
                    "grid.{k} does not apply to geometry \"{geometry}\""
                ))),
                None => Ok(()),
            }
        };
        let spec = match self.geometry {
            GeometryKind::Interval => {
                stray(
                    &[
                        ("lx", self.lx.is_some()),
                        ("ly", self.ly.is_some()),
                        ("radius", self.radius.is_some()),
                        ("cells_y", self.cells_y.is_some()),
                    ],
                    "interval",
                )?;
                GridSpec::interval(require(self.length, "length", "interval")?, self.cells)
            }
            GeometryKind::Rectangle => {
                stray(
                    &[("length", self.length.is_some()), ("radius", self.radius.is_some())],
                    "rectangle",
                )?;
                let ny = self
                    .cells_y
                    .ok_or_else(|| ConfigError::Invalid("grid.cells_y is required for geometry \"rectangle\"".into()))?;
                GridSpec::rectangle(
                    require(self.lx, "lx", "rectangle")?,
                    require(self.ly, "ly", "rectangle")?,
                    self.cells,
                    ny,
                )
            }
            GeometryKind::RadialDisk => {
                stray(
                    &[
                        ("length", self.length.is_some()),
                        ("lx", self.lx.is_some()),
                        ("ly", self.ly.is_some()),
                        ("cells_y", self.cells_y.is_some()),
                    ],
                    "radial_disk",
                )?;
                GridSpec::radial_disk(require(self.radius, "radius", "radial_disk")?, self.cells)
            }
        };
        spec.validate().map_err(|e| ConfigError::Invalid(format!("grid: {e}")))?;
        Ok(spec)
    }

    pub fn from_spec(spec: &GridSpec) -> Self {
        let mut out = GridSection {
            geometry: GeometryKind::Interval,
            length: None,
            lx: None,
            ly: None,
            radius: None,
            cells: spec.cells[0],
            cells_y: None,
        };
        match spec.geometry {
            Geometry::Interval { length } => out.length = Some(length),
            Geometry::Rectangle { lx, ly } => {
                out.geometry = GeometryKind::Rectangle;
                out.lx = Some(lx);
                out.ly = Some(ly);
                out.cells_y = Some(spec.cells[1]);
            }
            Geometry::RadialDisk { radius } => {
                out.geometry = GeometryKind::RadialDisk;
                out.radius = Some(radius);
            }
        }
        out
    }
}

fn default_sample_interval() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    /// Gradient monitor exponent; defaults to `n + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            sample_interval: default_sample_interval(),
            q: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Write the fields at every sample time.
    #[serde(default)]
    pub snapshots: bool,
    #[serde(default = "yes")]
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            snapshots: false,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    RandomBump,
    ConcentratedGaussian,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub family: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl InitialSection {
    pub fn to_data(&self) -> Result<InitialData, ConfigError> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| ConfigError::Invalid(format!("initial.{key} is required for this family")))
        };
        let data = match self.family {
            FamilyKind::RandomBump => InitialData::RandomBump {
                mass: need(self.mass, "mass")?,
            },
            FamilyKind::ConcentratedGaussian => InitialData::ConcentratedGaussian {
                mass: need(self.mass, "mass")?,
                width: need(self.width, "width")?,
            },
            FamilyKind::Constant => InitialData::Constant {
                u: need(self.u, "u")?,
                v: need(self.v, "v")?,
                w: need(self.w, "w")?,
            },
        };
        data.validate().map_err(|e| ConfigError::Invalid(format!("initial: {e}")))?;
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alpha_values: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub conversion: ConversionFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: GridSection,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
    pub initial: InitialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        let spec = RunSpec {
            model: self.model.clone(),
            grid: self.grid.to_spec()?,
            stepper: self.stepper.clone(),
            sample_interval: self.diagnostics.sample_interval,
            q: self.diagnostics.q,
            initial: self.initial.to_data()?,
            seed: self.initial.seed,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, ConfigError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [sweep] section".into()))?;
        let spec = SweepSpec {
            base: self.run_spec()?,
            alpha_values: sweep.alpha_values.clone(),
            kappa_values: sweep.kappa_values.clone(),
            seeds: sweep.seeds.clone(),
            conversion: sweep.conversion,
            workers: sweep.workers,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

/// Only the `[model]` table is read; other sections are ignored.
#[derive(Debug, Deserialize)]
pub struct ModelOnly {
    pub model: ModelSpec,
}

impl ModelOnly {
    pub fn load(path: &Path) -> Result<ModelSpec, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: ModelOnly = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        parsed
            .model
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        Ok(parsed.model)
    }
}
