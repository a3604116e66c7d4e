use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rangecert::{CostLabel, Verdict};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub restart: usize,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// Absent for diverged runs.
    pub verdict: Option<Verdict>,
    pub duality_gap: Option<f64>,
    pub min_diag: Option<f64>,
    pub stationarity_residual: Option<f64>,
    pub label: CostLabel,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub solve_seconds: f64,
    pub duals_seconds: f64,
    pub assemble_seconds: f64,
    pub psd_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub num_times: usize,
    pub num_measurements: usize,
    pub num_anchors: usize,
    pub dim: usize,
    pub fallback_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    /// SHA-256 of the input files (or of the resolved config for simulated
    /// input).
    pub input_hash: String,
    pub config: RunConfig,
    pub problem: ProblemSummary,
    /// Sorted by cost.
    pub restarts: Vec<RestartReport>,
    /// Restart written to the estimate file.
    pub selected_restart: Option<usize>,
    pub selected_certified: bool,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub timing: Timing,
    pub warnings: Vec<String>,
}

/// Hashes named byte blobs in order; names are included so that swapping
/// file contents changes the digest.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in parts {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}
