//! Declarative run configuration.
//!
//! A TOML file with dotted keys (`ce.n_samples = 200`) is layered over the
//! built-in defaults, so a file only lists what it changes. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{AbcConfig, DEFAULT_BINS};
use crate::ce::CeConfig;
use crate::data::{SyntheticConfig, DEFAULT_RECONCILE_TOL};
use crate::ic::{Compartment, IcReference, VirginConfig};
use crate::model::{ParamBounds, ParamVector};
use crate::sampling::Bounds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Reference values for initial-condition inference. Missing values are
/// read from the first day of the calibration window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcSettings {
    pub h_ref: Option<f64>,
    pub d_ref: Option<f64>,
    /// Weight of the hospitalization-matched state in the blend.
    pub weight: f64,
}

impl Default for IcSettings {
    fn default() -> Self {
        Self {
            h_ref: None,
            d_ref: None,
            weight: 0.75,
        }
    }
}

impl IcSettings {
    pub fn references(&self, h_fallback: f64, d_fallback: f64) -> Result<[IcReference; 2], ConfigError> {
        let make = |c, v| IcReference::new(c, v).map_err(|e| ConfigError::Invalid(e.to_string()));
        Ok([
            make(Compartment::H, self.h_ref.unwrap_or(h_fallback))?,
            make(Compartment::D, self.d_ref.unwrap_or(d_fallback))?,
        ])
    }

    pub fn weights(&self) -> [f64; 2] {
        [self.weight, 1.0 - self.weight]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    /// RK4 steps per day.
    pub substeps: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    /// First day of the calibration window; defaults to the first row.
    pub start: Option<NaiveDate>,
    /// Last day of the calibration window; defaults to the last row.
    pub end: Option<NaiveDate>,
    pub reconcile_tol: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            reconcile_tol: DEFAULT_RECONCILE_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// Central mass of the credible envelopes.
    pub level: f64,
    pub bins: usize,
    pub gnuplot: bool,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            bins: DEFAULT_BINS,
            gnuplot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathSettings {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Weight of the hospitalization block in the misfit.
    pub omega: f64,
    pub nominal: ParamVector,
    pub bounds: ParamBounds,
    pub ce: CeConfig,
    pub abc: AbcConfig,
    pub ic: IcSettings,
    pub virgin: VirginConfig,
    pub grid: GridSettings,
    pub data: DataSettings,
    pub synthetic: SyntheticConfig,
    pub report: ReportSettings,
    pub paths: PathSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            omega: 0.75,
            nominal: ParamVector::nominal(),
            bounds: ParamBounds::default(),
            ce: CeConfig::default(),
            abc: AbcConfig::default(),
            ic: IcSettings::default(),
            virgin: VirginConfig::default(),
            grid: GridSettings::default(),
            data: DataSettings::default(),
            synthetic: SyntheticConfig::default(),
            report: ReportSettings::default(),
            paths: PathSettings::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses `text` over the defaults. The result is not yet validated.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let over: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut base = toml::Table::try_from(RunConfig::default())
            .map_err(|e| ConfigError::Syntax(e.to_string()))?;
        merge(&mut base, over);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Copies the nominal parameters into the sections that use them.
    pub fn resolved(mut self) -> Self {
        self.virgin.params = self.nominal;
        self.synthetic.params = self.nominal;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is representable as TOML")
    }

    pub fn sampling_bounds(&self) -> Bounds {
        self.bounds.into()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("omega = {} not in [0, 1]", self.omega));
        }
        if !self.nominal.is_admissible() {
            return bad(format!("nominal parameters inadmissible: {:?}", self.nominal));
        }
        let lo = self.bounds.lower.to_array();
        let hi = self.bounds.upper.to_array();
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) || !self.bounds.is_ordered() {
            return bad("bounds must be finite with lower <= upper".into());
        }
        self.ce.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.abc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.virgin.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.ic.weight) {
            return bad(format!("ic.weight = {} not in [0, 1]", self.ic.weight));
        }
        for v in [self.ic.h_ref, self.ic.d_ref].into_iter().flatten() {
            if !(v >= 0.0) {
                return bad(format!("initial-condition reference {v} must be nonnegative"));
            }
        }
        if self.grid.substeps == 0 {
            return bad("grid.substeps must be at least 1".into());
        }
        if !(self.data.reconcile_tol >= 0.0) {
            return bad("data.reconcile_tol must be nonnegative".into());
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            if s > e {
                return bad(format!("data.start {s} after data.end {e}"));
            }
        }
        if !(self.report.level > 0.0 && self.report.level < 1.0) {
            return bad(format!("report.level = {} not in (0, 1)", self.report.level));
        }
        if self.report.bins == 0 {
            return bad("report.bins must be at least 1".into());
        }
        if self.synthetic.days == 0 || !(0.0..=1.0).contains(&self.synthetic.noise) {
            return bad("synthetic.days must be positive and synthetic.noise in [0, 1]".into());
        }
        Ok(())
    }
}
