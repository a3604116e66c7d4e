//! Synthetic range-only experiments.
//!
//! Trajectories follow the constant-velocity model driven by white
//! acceleration noise, anchors are placed uniformly in (or near a line
//! through) the trajectory's bounding box, and ranges are perturbed by
//! Gaussian noise before being stored.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{interval_covariance, transition, PriorKind};
use crate::problem::{AnchorSet, GroundTruth, MeasurementSet, NoiseModel, Observation, ProblemData};

/// Bounding-box extents are floored at this value.
pub const MIN_EXTENT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Every anchor at every time.
    #[default]
    AllAnchors,
    /// One reading per time, cycling through the anchors.
    RoundRobinOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Placement {
    #[default]
    UniformBox,
    /// Anchors on a random line through the box, displaced perpendicular to
    /// it by at most `epsilon` times the box diagonal.
    NearColinear { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_times: usize,
    pub num_anchors: usize,
    pub dim: usize,
    /// Acceleration noise intensity; `Q_C = σ_a I`. Zero gives straight lines.
    pub sigma_a: f64,
    /// Standard deviation of the additive range noise.
    pub sigma_d: f64,
    /// Time step. The default spans unit duration for the default `N`, so the
    /// trajectory stays on the scale of its `[−1, 1]` initial draw.
    pub dt: f64,
    /// Initial position and velocity are drawn from `[−v, v]` per coordinate.
    pub initial_range: f64,
    /// Scales the initial velocity draw; zero gives a stationary target.
    pub velocity_scale: f64,
    pub schedule: Schedule,
    pub placement: Placement,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_times: 100,
            num_anchors: 6,
            dim: 2,
            sigma_a: 0.2,
            sigma_d: 1e-3,
            dt: 0.01,
            initial_range: 1.0,
            velocity_scale: 1.0,
            schedule: Schedule::AllAnchors,
            placement: Placement::UniformBox,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_times == 0 || self.num_anchors == 0 {
            return Err(Error::Invalid("need at least one time and one anchor".into()));
        }
        if !(2..=3).contains(&self.dim) {
            return Err(Error::Invalid(format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        let nonneg = [
            ("sigma_a", self.sigma_a),
            ("sigma_d", self.sigma_d),
            ("initial_range", self.initial_range),
            ("velocity_scale", self.velocity_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if let Placement::NearColinear { epsilon } = self.placement {
            if !(epsilon >= 0.0) {
                return Err(Error::Invalid(format!("epsilon must be nonnegative, got {epsilon}")));
            }
        }
        Ok(())
    }
}

/// Simulated constant-velocity trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub times: Vec<f64>,
    /// `2D × N`: position rows then velocity rows.
    pub states: DMatrix<f64>,
}

impl SimTrajectory {
    pub fn dim(&self) -> usize {
        self.states.nrows() / 2
    }

    pub fn positions(&self) -> DMatrix<f64> {
        self.states.rows(0, self.dim()).clone_owned()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(self.times.clone(), self.positions()).expect("simulated times increase")
    }

    /// Stacked states for a prior with `state_dim` entries per time (positions
    /// only when `state_dim == D`).
    pub fn stacked(&self, state_dim: usize) -> DVector<f64> {
        let n = self.times.len();
        DVector::from_fn(n * state_dim, |i, _| self.states[(i % state_dim, i / state_dim)])
    }

    /// Coordinate-wise bounds of the positions, each extent floored at
    /// [`MIN_EXTENT`] about its midpoint.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.positions();
        let mut lo = DVector::from_fn(p.nrows(), |r, _| p.row(r).min());
        let mut hi = DVector::from_fn(p.nrows(), |r, _| p.row(r).max());
        for r in 0..p.nrows() {
            if hi[r] - lo[r] < MIN_EXTENT {
                let mid = 0.5 * (hi[r] + lo[r]);
                lo[r] = mid - 0.5 * MIN_EXTENT;
                hi[r] = mid + 0.5 * MIN_EXTENT;
            }
        }
        (lo, hi)
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Samples a constant-velocity trajectory on a uniform time grid starting at 0.
pub fn sample_trajectory<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<SimTrajectory> {
    config.validate()?;
    let d = config.dim;
    let v = config.initial_range;
    let times: Vec<f64> = (0..config.num_times).map(|i| i as f64 * config.dt).collect();
    let mut states = DMatrix::zeros(2 * d, config.num_times);
    for r in 0..d {
        states[(r, 0)] = if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
    }
    for r in 0..d {
        let vel = if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
        states[(d + r, 0)] = config.velocity_scale * vel;
    }
    let phi = transition(PriorKind::ConstantVelocity, d, config.dt, 0.0)?;
    let noise_factor = if config.sigma_a > 0.0 {
        let q_c = DMatrix::identity(d, d) * config.sigma_a;
        let w = interval_covariance(PriorKind::ConstantVelocity, &q_c, config.dt)?;
        Some(w.cholesky().ok_or_else(|| Error::Domain("interval covariance is not positive definite".into()))?.l())
    } else {
        None
    };
    for n in 1..config.num_times {
        let mut next = &phi * states.column(n - 1);
        if let Some(l) = &noise_factor {
            let z = DVector::from_fn(2 * d, |_, _| gaussian(rng));
            next += l * z;
        }
        states.set_column(n, &next);
    }
    Ok(SimTrajectory { times, states })
}

/// Places anchors relative to the trajectory's bounding box.
pub fn place_anchors<R: Rng>(config: &SimConfig, trajectory: &SimTrajectory, rng: &mut R) -> Result<AnchorSet> {
    config.validate()?;
    let d = config.dim;
    let (lo, hi) = trajectory.bounding_box();
    let extent = &hi - &lo;
    let m = config.num_anchors;
    let coords = match config.placement {
        Placement::UniformBox => DMatrix::from_fn(d, m, |r, _| lo[r] + extent[r] * rng.random_range(0.0..=1.0)),
        Placement::NearColinear { epsilon } => {
            let diag = extent.norm();
            let center = DVector::from_fn(d, |r, _| lo[r] + extent[r] * rng.random_range(0.0..=1.0));
            let mut dir = DVector::from_fn(d, |_, _| gaussian(rng));
            dir /= dir.norm();
            // orthonormal complement of the line direction
            let mut basis = DMatrix::identity(d, d);
            basis.set_column(0, &dir);
            let q = basis.qr().q();
            let mut coords = DMatrix::zeros(d, m);
            for a in 0..m {
                let s = rng.random_range(-0.5..=0.5) * diag;
                let mut p = &center + &dir * s;
                for c in 1..d {
                    let off = if epsilon > 0.0 { rng.random_range(-epsilon..=epsilon) } else { 0.0 };
                    p += q.column(c) * (off * diag);
                }
                coords.set_column(a, &p);
            }
            coords
        }
    };
    AnchorSet::with_default_ids(coords)
}

/// Noisy ranges `max(‖aₘ − xₙ‖ + η, 0)`, `η ~ N(0, σ_d²)`.
pub fn synthesize_measurements<R: Rng>(
    config: &SimConfig,
    trajectory: &SimTrajectory,
    anchors: &AnchorSet,
    rng: &mut R,
) -> Result<MeasurementSet> {
    config.validate()?;
    let m = anchors.len();
    let positions = trajectory.positions();
    let groups = (0..trajectory.times.len())
        .map(|n| {
            let which: Vec<usize> = match config.schedule {
                Schedule::AllAnchors => (0..m).collect(),
                Schedule::RoundRobinOne => vec![n % m],
            };
            which
                .into_iter()
                .map(|a| {
                    let dist = (anchors.position(a) - positions.column(n)).norm();
                    let eta = if config.sigma_d > 0.0 { config.sigma_d * gaussian(rng) } else { 0.0 };
                    Observation { anchor: a, distance: (dist + eta).max(0.0) }
                })
                .collect()
        })
        .collect();
    MeasurementSet::new(trajectory.times.clone(), groups, m)
}

/// A complete simulated data set.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: SimConfig,
    pub trajectory: SimTrajectory,
    pub anchors: AnchorSet,
    pub measurements: MeasurementSet,
}

impl Simulation {
    /// Problem instance with the given noise model and ground truth attached.
    pub fn problem(&self, noise: NoiseModel) -> Result<ProblemData> {
        ProblemData::new(
            self.anchors.clone(),
            self.measurements.clone(),
            noise,
            Some(self.trajectory.ground_truth()),
        )
    }
}

/// Runs all three stages from one generator seeded with `config.rng_seed`.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let trajectory = sample_trajectory(config, &mut rng)?;
    let anchors = place_anchors(config, &trajectory, &mut rng)?;
    let measurements = synthesize_measurements(config, &trajectory, &anchors, &mut rng)?;
    Ok(Simulation {
        config: config.clone(),
        trajectory,
        anchors,
        measurements,
    })
}
