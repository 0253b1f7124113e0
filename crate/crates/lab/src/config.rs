use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sinai_core::diffusion::VScheme;
use sinai_core::environment::{EnvironmentError, EnvironmentSpec, Family};

use crate::LabError;

/// Environment law; per-replica seeds are derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub family: Family,
    pub nu: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self { family: Family::TwoPoint { a: 0.8 }, nu: 0.1 }
    }
}

impl EnvironmentConfig {
    pub fn spec(&self, seed: u64) -> EnvironmentSpec {
        EnvironmentSpec { family: self.family, nu: self.nu, seed }
    }

    pub fn sigma(&self) -> Result<f64, EnvironmentError> {
        Ok(self.spec(0).sinai_sigma2()?.sqrt())
    }
}

/// Every knob of every experiment. Fields an experiment does not read are
/// still serialized, so a saved config reproduces the run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub master_seed: u64,
    pub environment: EnvironmentConfig,
    pub m_list: Vec<u32>,
    pub replicas: u64,
    pub x_grid: Vec<f64>,
    /// Brownian step for paths that drive the Brox clock.
    pub dt: f64,
    /// Grid step for potentials.
    pub dx: f64,
    /// Step of the direct Euler scheme for `H`.
    pub dx_euler: f64,
    /// Window bandwidth; `None` means `10 √dt`.
    pub eps: Option<f64>,
    /// Generation cap for direct branching runs; `None` means `50 m`.
    pub g_max: Option<u64>,
    /// Step cap per walk; `None` means `5000 m²`.
    pub n_cap: Option<u64>,
    /// Override of the potential scale; `None` means `σ` of the environment.
    pub sigma: Option<f64>,
    pub v_scheme: VScheme,
    /// Distance threshold for trend or fixed-tolerance verdicts.
    pub threshold: Option<f64>,
    /// Offspring parameters for the moment experiment.
    pub alphas: Vec<f64>,
    /// Sites per side for the offspring experiment.
    pub sites: u32,
    /// Time horizon for marginals at fixed `t`.
    pub horizon: f64,
    /// Local-time scaling `c` in `l(x, T̃) ~ V(c² x)`.
    pub calibration: f64,
    pub quick: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            master_seed: 1,
            environment: EnvironmentConfig::default(),
            m_list: vec![25, 50, 100],
            replicas: 10_000,
            x_grid: vec![0.1, 0.25, 0.5, 1.0],
            dt: 1e-4,
            dx: 1e-3,
            dx_euler: 1e-4,
            eps: None,
            g_max: None,
            n_cap: None,
            sigma: None,
            v_scheme: VScheme::ExactBesq,
            threshold: None,
            alphas: vec![0.4, 0.5, 2.0 / 3.0],
            sites: 20,
            horizon: 1.0,
            calibration: 2.0,
            quick: false,
            output_dir: None,
        }
    }
}

pub const EXPERIMENTS: &[&str] = &[
    "identity",
    "offspring",
    "moments",
    "kurtz",
    "diffusion-oracles",
    "calibrate-rayknight",
    "h-consistency",
    "main-limit",
    "theorem-a",
];

impl ExperimentConfig {
    /// Acceptance-scale defaults for a named experiment.
    pub fn for_experiment(name: &str) -> Result<Self, LabError> {
        if !EXPERIMENTS.contains(&name) {
            return Err(LabError::UnknownExperiment(name.to_string()));
        }
        let mut c = Self { experiment: name.to_string(), ..Self::default() };
        match name {
            "identity" => c.m_list = vec![1, 4, 25],
            "offspring" => c.m_list = vec![25],
            "moments" => c.replicas = 1_000_000,
            "kurtz" => c.m_list = vec![100, 10_000],
            "diffusion-oracles" => c.dt = 1e-5,
            "calibrate-rayknight" => c.x_grid = vec![0.25, 0.5, 1.0],
            "h-consistency" => {
                c.x_grid = vec![0.5];
                c.threshold = Some(0.03);
            }
            "main-limit" => {
                c.x_grid = vec![0.25, 0.5, 1.0];
                c.threshold = Some(0.06);
            }
            "theorem-a" => {
                c.m_list = vec![100];
                c.threshold = Some(0.06);
            }
            _ => {}
        }
        Ok(c)
    }

    /// Smoke-test profile: a tenth of the replicas, thresholds widened by √10.
    pub fn quick(mut self) -> Self {
        if !self.quick {
            self.quick = true;
            self.replicas = (self.replicas / 10).max(30);
            self.threshold = self.threshold.map(|t| t * 10f64.sqrt());
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(path.to_path_buf(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(LabError::UnknownExperiment(self.experiment.clone()));
        }
        self.environment.spec(0).validate().map_err(|e| LabError::Config(e.to_string()))?;
        let bad = |what: &str| Err(LabError::Config(what.to_string()));
        if self.replicas == 0 {
            return bad("replicas must be positive");
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return bad("m_list must hold positive levels");
        }
        if !(self.dt > 0.0 && self.dx > 0.0 && self.dx_euler > 0.0 && self.horizon > 0.0) {
            return bad("grid steps and horizon must be positive");
        }
        if self.x_grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("x_grid must be finite and nonnegative");
        }
        if self.eps.is_some_and(|e| e <= 0.0) {
            return bad("eps must be positive");
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("alphas must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(10.0 * self.dt.sqrt())
    }

    pub fn sigma(&self) -> Result<f64, LabError> {
        match self.sigma {
            Some(s) => Ok(s),
            None => self.environment.sigma().map_err(|e| LabError::Config(e.to_string())),
        }
    }

    pub fn g_max(&self, m: u32) -> u64 {
        self.g_max.unwrap_or(50 * u64::from(m))
    }

    pub fn n_cap(&self, m: u32) -> u64 {
        self.n_cap.unwrap_or(5000 * u64::from(m) * u64::from(m))
    }

    /// One-line JSON, embedded as the first line of every output file.
    pub fn header(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
