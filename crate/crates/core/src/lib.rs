//! Continuous-time range-only trajectory estimation with a linear-time
//! global optimality certificate.
//!
//! The pipeline is: load or simulate a [`ProblemData`], pick a [`MotionPrior`],
//! run the Gauss-Newton solver ([`solver::multi_restart`]) and check every
//! returned estimate with [`cert::certify`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cert;
pub mod error;
pub mod lift;
pub mod linalg;
pub mod model;
pub mod prior;
pub mod problem;
pub mod sim;
pub mod solver;

pub use cert::{certify, CertificateReport, CertifyConfig, DualVariables, Verdict};
pub use error::{Error, Result};
pub use lift::LiftedMatrices;
pub use linalg::{ArrowheadMatrix, BlockTridiag};
pub use model::TrajectoryEstimate;
pub use prior::{MotionPrior, PriorKind};
pub use problem::{AnchorSet, GroundTruth, MeasurementSet, NoiseModel, Observation, ProblemData, VariancePolicy};
pub use sim::{Placement, Schedule, SimConfig, Simulation};
pub use solver::{CostLabel, InitStrategy, SolveConfig};
