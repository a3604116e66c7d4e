//! The single JSON run configuration shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rangecert::{CertifyConfig, MotionPrior, NoiseModel, PriorKind, SimConfig, SolveConfig, VariancePolicy};

use crate::error::{CliError, Result};

/// Shipped template; every default is documented inline under `_doc` keys.
pub const TEMPLATE: &str = include_str!("../config.template.json");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub solve: SolveConfig,
    pub noise: NoiseConfig,
    pub prior: PriorConfig,
    pub certify: CertifyConfig,
    pub bench: BenchConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Falls back to `sim.sigma_d` when absent.
    pub sigma: Option<f64>,
    pub policy: VariancePolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub sigma_a: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            kind: PriorKind::ConstantVelocity,
            sigma_a: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    /// Gauss-Newton iterations per size, started from the ground truth.
    pub max_iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000, 100_000, 1_000_000],
            max_iterations: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub setups: usize,
    pub noise_levels: Vec<f64>,
    /// Relative cost gap within which a restart counts as best-cost.
    pub gap_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            setups: 100,
            noise_levels: vec![1e-3, 1e-2, 1e-1],
            gap_tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    /// `--seed` overrides both the simulation and the restart seeds.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.sim.rng_seed = s;
            self.solve.rng_seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.solve.validate()?;
        if self.sweep.gap_tolerance.is_nan() || self.sweep.gap_tolerance < 0.0 {
            return Err(CliError::Usage(format!(
                "sweep.gap_tolerance must be nonnegative, got {}",
                self.sweep.gap_tolerance
            )));
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let sigma = self.noise.sigma.unwrap_or(self.sim.sigma_d);
        if sigma == 0.0 {
            return Err(CliError::Usage(
                "noise sigma is zero (noiseless simulation); set noise.sigma to a positive value".into(),
            ));
        }
        Ok(NoiseModel::new(sigma, self.noise.policy)?)
    }

    pub fn motion_prior(&self, dim: usize) -> Result<MotionPrior> {
        Ok(MotionPrior::isotropic(self.prior.kind, dim, self.prior.sigma_a)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
