//! JSON run configuration shared by `jko-run`, `verify` and `subdiff-check`.

use std::path::{Path, PathBuf};

use hkflow::energy::{EnergyConfig, EnergySpec};
use hkflow::jko::SchemeConfig;
use hkflow::measures::{DomainBox, GridDensity, Params};
use hkflow::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainBox,
    pub grid: Vec<usize>,
    pub params: Params,
    pub energy: EnergyConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Initial density on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Uniform { value: f64 },
    /// `base + amplitude cos(k pi (x_0 - lo_0) / L_0)`.
    Cosine { base: f64, amplitude: f64, k: f64 },
    /// One value per cell in a column named `u`, in row-major cell order.
    Csv { path: PathBuf },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Uniform { value: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub taus: Vec<f64>,
    pub dt_safety: f64,
    /// Test-function horizon; defaults to the scheme horizon.
    pub psi_horizon: Option<f64>,
    /// Number of random instances for `subdiff-check`.
    pub cases: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig { taus: vec![0.02, 0.01, 0.005], dt_safety: 0.25, psi_horizon: None, cases: 20 }
    }
}

/// A validated configuration with its energy and initial density built.
pub struct Run {
    pub config: RunConfig,
    pub spec: EnergySpec,
    pub u0: GridDensity,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Run> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.build(base)
    }

    pub fn build(self, base: &Path) -> Result<Run> {
        self.params.validate()?;
        self.scheme.validate()?;
        if self.grid.len() != self.domain.dim() || self.grid.contains(&0) {
            return Err(Error::Config(format!("grid {:?} does not match a {}-d domain", self.grid, self.domain.dim())));
        }
        let v = &self.verification;
        if v.taus.iter().any(|t| !(*t > 0.0)) || !(v.dt_safety > 0.0 && v.dt_safety <= 1.0) {
            return Err(Error::Config("verification taus must be positive and 0 < dt_safety <= 1".into()));
        }
        let spec = self.energy.build(&self.domain, base)?;
        let u0 = self.initial_density(base)?;
        Ok(Run { config: self, spec, u0 })
    }

    fn initial_density(&self, base: &Path) -> Result<GridDensity> {
        let d = &self.domain;
        match &self.initial {
            InitialConfig::Uniform { value } => GridDensity::from_fn(d, &self.grid, |_| *value),
            InitialConfig::Cosine { base: b, amplitude, k } => {
                let (lo, len) = (d.lo[0], d.hi[0] - d.lo[0]);
                GridDensity::from_fn(d, &self.grid, |x| b + amplitude * (k * std::f64::consts::PI * (x[0] - lo) / len).cos())
            }
            InitialConfig::Csv { path } => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                if !full.exists() {
                    return Err(Error::Config(format!("initial density {} not found", full.display())));
                }
                let values = crate::io::read_column(&full, "u")?;
                let grid = GridDensity::from_fn(d, &self.grid, |_| 0.0)?;
                if values.len() != grid.num_cells() {
                    return Err(Error::Config(format!("{} holds {} values for {} cells", full.display(), values.len(), grid.num_cells())));
                }
                grid.with_values(values)
            }
        }
    }
}
