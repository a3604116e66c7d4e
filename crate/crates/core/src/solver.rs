//! Sparse Gauss-Newton solver and restart orchestration.
//!
//! One iteration solves
//! `(R + (N/E) JᵀΣ⁻¹J) δθ = −Rθ + (N/E) JᵀΣ⁻¹(d̃² − h(θ))`.
//! The measurement term only touches the position sub-block of each diagonal
//! block, so the normal matrix keeps the prior's block-tridiagonal pattern and
//! each solve is a block Cholesky in `O(N K³)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiag;
use crate::model::{check_dims, total_cost, TrajectoryEstimate};
use crate::prior::{assemble_r, MotionPrior};
use crate::problem::ProblemData;

/// Tolerance for matching ground-truth stamps to measurement times.
pub const TRUTH_MATCH_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Ground-truth positions with zero velocities; yields a single estimate.
    GroundTruth,
    /// Positions uniform in the (scaled) anchor bounding box, zero velocities.
    #[default]
    RandomInBox,
    /// Caller-provided initial state; yields a single estimate.
    UserSupplied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iterations: usize,
    /// Stop once the RMS of the update drops below this.
    pub step_tolerance: f64,
    pub n_restarts: usize,
    pub init: InitStrategy,
    /// Scale of the initialization box about the anchor bounding box center.
    pub init_box_scale: f64,
    pub rng_seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-10,
            n_restarts: 10,
            init: InitStrategy::RandomInBox,
            init_box_scale: 1.0,
            rng_seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_tolerance > 0.0) {
            return Err(Error::Invalid(format!("step_tolerance must be positive, got {}", self.step_tolerance)));
        }
        if self.n_restarts == 0 {
            return Err(Error::Invalid("n_restarts must be at least 1".into()));
        }
        if !(self.init_box_scale > 0.0) || !self.init_box_scale.is_finite() {
            return Err(Error::Invalid(format!("init_box_scale must be positive, got {}", self.init_box_scale)));
        }
        Ok(())
    }
}

/// Result of one Gauss-Newton iteration.
#[derive(Clone, Debug)]
pub struct GnStep {
    pub delta: DVector<f64>,
    /// Total cost at `θ + δθ`.
    pub cost: f64,
}

impl GnStep {
    pub fn rms(&self) -> f64 {
        if self.delta.is_empty() {
            return 0.0;
        }
        self.delta.norm() / (self.delta.len() as f64).sqrt()
    }
}

/// Gauss-Newton solver for one problem; holds the assembled prior matrix.
#[derive(Clone, Debug)]
pub struct GaussNewton<'a> {
    problem: &'a ProblemData,
    prior: &'a MotionPrior,
    r: BlockTridiag,
}

impl<'a> GaussNewton<'a> {
    pub fn new(problem: &'a ProblemData, prior: &'a MotionPrior) -> Result<Self> {
        check_dims(problem, prior)?;
        let r = assemble_r(prior, problem.times())?;
        Ok(Self { problem, prior, r })
    }

    /// Unscaled prior matrix `R`.
    pub fn prior_matrix(&self) -> &BlockTridiag {
        &self.r
    }

    pub fn state_len(&self) -> usize {
        self.problem.num_times() * self.prior.state_dim()
    }

    /// Normal matrix and right-hand side at `theta`.
    pub fn normal_equations(&self, theta: &DVector<f64>) -> Result<(BlockTridiag, DVector<f64>)> {
        if theta.len() != self.state_len() {
            return Err(Error::Dimension { expected: self.state_len(), got: theta.len() });
        }
        let p = self.problem;
        let (d, k) = (p.dim(), self.prior.state_dim());
        let scale = p.num_times() as f64 / p.num_measurements() as f64;
        let mut a = self.r.clone();
        let mut rhs = -self.r.mul_vec(theta);
        for n in 0..p.num_times() {
            let x = theta.rows(n * k, d);
            let mut blk = a.diag_mut(n);
            for (o, &w) in p.observations(n).iter().zip(p.inv_variances(n)) {
                let anchor = p.anchors.position(o.anchor);
                // row of J is 2 (x − a)ᵀ
                let mut jrow = [0.0; 3];
                let mut h = 0.0;
                for c in 0..d {
                    let diff = x[c] - anchor[c];
                    jrow[c] = 2.0 * diff;
                    h += diff * diff;
                }
                let e = o.distance * o.distance - h;
                for r in 0..d {
                    for c in 0..d {
                        blk[(r, c)] += scale * w * jrow[r] * jrow[c];
                    }
                    rhs[n * k + r] += scale * w * jrow[r] * e;
                }
            }
        }
        Ok((a, rhs))
    }

    /// One Gauss-Newton update from `theta`.
    pub fn step(&self, theta: &DVector<f64>) -> Result<GnStep> {
        let (a, rhs) = self.normal_equations(theta)?;
        let chol = a.cholesky().map_err(|block| Error::RankDeficient { block })?;
        let delta = chol.solve(&rhs);
        let cost = total_cost(self.problem, self.prior, &(theta + &delta))?;
        Ok(GnStep { delta, cost })
    }

    /// Iterates [`GaussNewton::step`] from `theta0` until the RMS step falls
    /// below the tolerance or the iteration budget runs out.
    pub fn solve(&self, config: &SolveConfig, theta0: &DVector<f64>) -> Result<TrajectoryEstimate> {
        config.validate()?;
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("initial state is not finite".into()));
        }
        let mut theta = theta0.clone();
        let mut cost = total_cost(self.problem, self.prior, &theta)?;
        let mut iterations = 0;
        let mut converged = false;
        let mut diverged = false;
        while iterations < config.max_iterations {
            let step = self.step(&theta)?;
            iterations += 1;
            if !step.cost.is_finite() || step.delta.iter().any(|v| !v.is_finite()) {
                diverged = true;
                break;
            }
            theta += &step.delta;
            cost = step.cost;
            if step.rms() < config.step_tolerance {
                converged = true;
                break;
            }
        }
        Ok(TrajectoryEstimate {
            theta: theta.as_slice().to_vec(),
            times: self.problem.times().to_vec(),
            dim: self.problem.dim(),
            state_dim: self.prior.state_dim(),
            cost,
            iterations,
            converged,
            diverged,
            restart: 0,
        })
    }
}

/// One Gauss-Newton update; see [`GaussNewton::step`].
pub fn gn_step(problem: &ProblemData, prior: &MotionPrior, theta: &DVector<f64>) -> Result<GnStep> {
    GaussNewton::new(problem, prior)?.step(theta)
}

/// Runs Gauss-Newton from `theta0`.
pub fn solve(
    problem: &ProblemData,
    prior: &MotionPrior,
    config: &SolveConfig,
    theta0: &DVector<f64>,
) -> Result<TrajectoryEstimate> {
    GaussNewton::new(problem, prior)?.solve(config, theta0)
}

/// Stacks positions into a state vector with zero velocities.
fn states_from_positions(positions: &[DVector<f64>], state_dim: usize) -> DVector<f64> {
    let mut theta = DVector::zeros(positions.len() * state_dim);
    for (n, x) in positions.iter().enumerate() {
        theta.rows_mut(n * state_dim, x.len()).copy_from(x);
    }
    theta
}

/// Ground-truth positions at the measurement times, zero velocities.
pub fn ground_truth_init(problem: &ProblemData, state_dim: usize) -> Result<DVector<f64>> {
    let gt = problem
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Invalid("ground-truth initialization needs a ground-truth file".into()))?;
    let positions = problem
        .times()
        .iter()
        .map(|&t| {
            let i = gt.times.partition_point(|&s| s < t - TRUTH_MATCH_TOL);
            match gt.times.get(i) {
                Some(&s) if (s - t).abs() <= TRUTH_MATCH_TOL => Ok(gt.positions.column(i).clone_owned()),
                _ => Err(Error::Invalid(format!("no ground-truth sample at t = {t}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(states_from_positions(&positions, state_dim))
}

/// Draws one initial state: positions uniform in the scaled anchor bounding
/// box, velocities zero.
pub fn random_init<R: Rng>(problem: &ProblemData, state_dim: usize, box_scale: f64, rng: &mut R) -> DVector<f64> {
    let (lo, hi) = problem.anchors.bounding_box();
    let center = (&lo + &hi) * 0.5;
    let half = (&hi - &lo) * (0.5 * box_scale);
    let d = problem.dim();
    let positions: Vec<DVector<f64>> = (0..problem.num_times())
        .map(|_| {
            DVector::from_fn(d, |r, _| {
                if half[r] > 0.0 {
                    rng.random_range(center[r] - half[r]..=center[r] + half[r])
                } else {
                    center[r]
                }
            })
        })
        .collect();
    states_from_positions(&positions, state_dim)
}

/// Runs the configured restarts and returns the estimates sorted by cost
/// (ties broken by restart index). Diverged runs sort last.
pub fn multi_restart(
    problem: &ProblemData,
    prior: &MotionPrior,
    config: &SolveConfig,
    user_init: Option<&DVector<f64>>,
) -> Result<Vec<TrajectoryEstimate>> {
    config.validate()?;
    let gn = GaussNewton::new(problem, prior)?;
    let k = prior.state_dim();
    let inits = match config.init {
        InitStrategy::GroundTruth => vec![ground_truth_init(problem, k)?],
        InitStrategy::UserSupplied => vec![user_init
            .ok_or_else(|| Error::Invalid("user-supplied initialization requested but none given".into()))?
            .clone()],
        InitStrategy::RandomInBox => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            (0..config.n_restarts)
                .map(|_| random_init(problem, k, config.init_box_scale, &mut rng))
                .collect()
        }
    };
    let mut out = Vec::with_capacity(inits.len());
    for (i, theta0) in inits.iter().enumerate() {
        let mut est = gn.solve(config, theta0)?;
        est.restart = i;
        out.push(est);
    }
    sort_by_cost(&mut out);
    Ok(out)
}

/// Sorts by `(diverged, cost, restart)`.
pub fn sort_by_cost(estimates: &mut [TrajectoryEstimate]) {
    estimates.sort_by(|a, b| {
        let ka = (a.diverged || !a.cost.is_finite(), a.cost, a.restart);
        let kb = (b.diverged || !b.cost.is_finite(), b.cost, b.restart);
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostLabel {
    BestCost,
    Suboptimal,
}

/// Absolute slack added to the relative gap test so that roundoff-level costs
/// (noiseless data) still compare equal.
pub const LABEL_ABS_FLOOR: f64 = 1e-12;

/// Labels costs within `gap_tolerance` (relative to the smallest finite cost,
/// plus [`LABEL_ABS_FLOOR`]) of the minimum as best-cost. Non-finite costs are
/// suboptimal.
pub fn label_by_best_cost(costs: &[f64], gap_tolerance: f64) -> Vec<CostLabel> {
    let best = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    costs
        .iter()
        .map(|&c| {
            if c.is_finite() && c - best <= gap_tolerance * best.abs() + LABEL_ABS_FLOOR {
                CostLabel::BestCost
            } else {
                CostLabel::Suboptimal
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cost_gradient;
    use crate::prior::PriorKind;
    use crate::problem::{AnchorSet, MeasurementSet, NoiseModel, Observation, VariancePolicy};
    use nalgebra::DMatrix;

    fn single_point(anchors: DMatrix<f64>, truth: [f64; 2], noise: &[f64]) -> ProblemData {
        let m = anchors.ncols();
        let obs = (0..m)
            .map(|a| {
                let d = (anchors.column(a) - DVector::from_column_slice(&truth)).norm();
                Observation { anchor: a, distance: d + noise[a] }
            })
            .collect();
        ProblemData::new(
            AnchorSet::with_default_ids(anchors).unwrap(),
            MeasurementSet::new(vec![0.0], vec![obs], m).unwrap(),
            NoiseModel::new(0.1, VariancePolicy::SquaredConstant).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_point_matches_grid_search() {
        let anchors = DMatrix::from_column_slice(2, 4, &[0.0, 0.0, 2.0, 0.1, 0.3, 1.9, 1.8, 2.2]);
        let p = single_point(anchors, [0.7, 1.1], &[0.03, -0.05, 0.02, 0.04]);
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let est = solve(&p, &prior, &SolveConfig::default(), &DVector::from_column_slice(&[1.0, 1.0])).unwrap();
        assert!(est.converged);
        // grid search over the anchor box at resolution 1e-3
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=2200 {
            for j in 0..=2200 {
                let x = DVector::from_column_slice(&[i as f64 * 1e-3, j as f64 * 1e-3]);
                let c = total_cost(&p, &prior, &x).unwrap();
                if c < best.0 {
                    best = (c, x[0], x[1]);
                }
            }
        }
        assert!(est.cost <= best.0 + 1e-12);
        assert!((est.theta[0] - best.1).abs() < 2e-3 && (est.theta[1] - best.2).abs() < 2e-3);
        let r = GaussNewton::new(&p, &prior).unwrap().prior_matrix().clone();
        let g = cost_gradient(&p, &r, &est.theta()).unwrap();
        assert!(g.amax() < 1e-8, "{}", g.amax());
    }

    #[test]
    fn underdetermined_point_is_rank_deficient() {
        let p = single_point(DMatrix::zeros(2, 1), [1.0, 0.5], &[0.0]);
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let err = gn_step(&p, &prior, &DVector::from_column_slice(&[0.3, 0.2])).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { block: 0 }));
        assert!(err.to_string().contains("add a motion prior"));
    }

    #[test]
    fn stationary_start_takes_zero_step() {
        let anchors = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 3.0, 0.0, 0.0, 3.0]);
        let p = single_point(anchors, [1.0, 2.0], &[0.0; 3]);
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let step = gn_step(&p, &prior, &DVector::from_column_slice(&[1.0, 2.0])).unwrap();
        assert!(step.rms() < 1e-10);
        assert!(step.cost < 1e-20);
    }

    #[test]
    fn labels_follow_relative_gap() {
        use CostLabel::*;
        assert_eq!(label_by_best_cost(&[3.0], 1e-6), vec![BestCost]);
        assert_eq!(label_by_best_cost(&[1.0, 1.0 + 1e-9, 2.0], 1e-6), vec![BestCost, BestCost, Suboptimal]);
        assert_eq!(label_by_best_cost(&[2.0, f64::NAN, 1.0], 1e-6), vec![Suboptimal, Suboptimal, BestCost]);
        // roundoff-level costs of noiseless data
        assert_eq!(label_by_best_cost(&[3e-22, 1e-20, 1e-3], 1e-6), vec![BestCost, BestCost, Suboptimal]);
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig { n_restarts: 0, ..Default::default() }.validate().is_err());
        assert!(SolveConfig { step_tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolveConfig::default().validate().is_ok());
    }
}
