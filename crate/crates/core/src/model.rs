//! Squared-range measurement model and the MAP cost.
//!
//! For position `xₙ` the model predicts `hₙ = [‖aₘ − xₙ‖²]ₘ` and the residual
//! is `eₙ = d̃ₙ² − hₙ`. The data cost is `f(θ) = (1/E) Σₙ eₙᵀ Σₙ⁻¹ eₙ` and the
//! full objective adds the prior energy `(1/N) θᵀ R θ`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiag;
use crate::prior::{prior_energy, MotionPrior};
use crate::problem::ProblemData;

/// Stacked trajectory states at the measurement times plus solver metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    /// `N·K` stacked states; each state starts with the position.
    pub theta: Vec<f64>,
    pub times: Vec<f64>,
    pub dim: usize,
    pub state_dim: usize,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// Restart index this estimate came from.
    pub restart: usize,
}

impl TrajectoryEstimate {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn position(&self, n: usize) -> DVectorView<'_, f64> {
        let k = self.state_dim;
        DVectorView::from_slice(&self.theta[n * k..n * k + self.dim], self.dim)
    }

    /// Velocity block, if the state carries one.
    pub fn velocity(&self, n: usize) -> Option<DVectorView<'_, f64>> {
        (self.state_dim == 2 * self.dim).then(|| {
            let k = self.state_dim;
            DVectorView::from_slice(&self.theta[n * k + self.dim..(n + 1) * k], self.dim)
        })
    }

    /// Positions as a `D×N` matrix.
    pub fn positions(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.num_times(), |r, c| self.theta[c * self.state_dim + r])
    }
}

fn check_position(problem: &ProblemData, x: &DVectorView<'_, f64>) {
    assert_eq!(x.len(), problem.dim(), "position dimension mismatch");
}

/// `hₙ(xₙ)`: squared distances to the anchors observed at time index `n`.
pub fn predict(problem: &ProblemData, n: usize, x: DVectorView<'_, f64>) -> DVector<f64> {
    check_position(problem, &x);
    let obs = problem.observations(n);
    DVector::from_iterator(
        obs.len(),
        obs.iter().map(|o| (problem.anchors.position(o.anchor) - x).norm_squared()),
    )
}

/// `eₙ = d̃ₙ² − hₙ(xₙ)`.
pub fn residual(problem: &ProblemData, n: usize, x: DVectorView<'_, f64>) -> DVector<f64> {
    check_position(problem, &x);
    let obs = problem.observations(n);
    DVector::from_iterator(
        obs.len(),
        obs.iter()
            .map(|o| o.distance * o.distance - (problem.anchors.position(o.anchor) - x).norm_squared()),
    )
}

/// The same residual in expanded form, `d̃² − γ + 2Yᵀx − ‖x‖²·1`, which is
/// linear in `(x, ‖x‖²)`.
pub fn residual_expanded(problem: &ProblemData, n: usize, x: DVectorView<'_, f64>) -> DVector<f64> {
    check_position(problem, &x);
    let z = x.norm_squared();
    let obs = problem.observations(n);
    DVector::from_iterator(
        obs.len(),
        obs.iter().map(|o| {
            let a = problem.anchors.position(o.anchor);
            o.distance * o.distance - a.norm_squared() + 2.0 * a.dot(&x) - z
        }),
    )
}

/// `∇ₓ hₙ`: row `m` is `−2 (aₘ − xₙ)ᵀ`.
pub fn jacobian(problem: &ProblemData, n: usize, x: DVectorView<'_, f64>) -> DMatrix<f64> {
    check_position(problem, &x);
    let obs = problem.observations(n);
    let d = problem.dim();
    let mut j = DMatrix::zeros(obs.len(), d);
    for (r, o) in obs.iter().enumerate() {
        let a = problem.anchors.position(o.anchor);
        for c in 0..d {
            j[(r, c)] = -2.0 * (a[c] - x[c]);
        }
    }
    j
}

fn check_theta(problem: &ProblemData, theta: &DVector<f64>, state_dim: usize) -> Result<()> {
    let want = problem.num_times() * state_dim;
    if theta.len() != want {
        return Err(Error::Dimension { expected: want, got: theta.len() });
    }
    if state_dim < problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: state_dim });
    }
    Ok(())
}

/// `f(θ) = (1/E) Σₙ eₙᵀ Σₙ⁻¹ eₙ`.
pub fn data_cost(problem: &ProblemData, theta: &DVector<f64>, state_dim: usize) -> Result<f64> {
    check_theta(problem, theta, state_dim)?;
    let d = problem.dim();
    let mut sum = 0.0;
    for n in 0..problem.num_times() {
        let e = residual(problem, n, theta.rows(n * state_dim, d));
        sum += e.iter().zip(problem.inv_variances(n)).map(|(e, w)| w * e * e).sum::<f64>();
    }
    Ok(sum / problem.num_measurements() as f64)
}

/// `f(θ) + r(θ)`.
pub fn total_cost(problem: &ProblemData, prior: &MotionPrior, theta: &DVector<f64>) -> Result<f64> {
    check_dims(problem, prior)?;
    Ok(data_cost(problem, theta, prior.state_dim())? + prior_energy(prior, problem.times(), theta)?)
}

pub(crate) fn check_dims(problem: &ProblemData, prior: &MotionPrior) -> Result<()> {
    if prior.dim() != problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: prior.dim() });
    }
    Ok(())
}

/// Gradient of the full objective: `(4/E)(Yₙ − xₙ1ᵀ)Σₙ⁻¹eₙ` on the position
/// entries plus `(2/N) R θ`. `r` must be the assembled prior matrix.
pub fn cost_gradient(problem: &ProblemData, r: &BlockTridiag, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let k = r.block_size();
    check_theta(problem, theta, k)?;
    let n_times = problem.num_times();
    let d = problem.dim();
    let inv_e = 1.0 / problem.num_measurements() as f64;
    let mut g = r.mul_vec(theta) * (2.0 / n_times as f64);
    for n in 0..n_times {
        let x = theta.rows(n * k, d);
        let e = residual(problem, n, x);
        for ((o, w), e) in problem.observations(n).iter().zip(problem.inv_variances(n)).zip(e.iter()) {
            let a = problem.anchors.position(o.anchor);
            for c in 0..d {
                g[n * k + c] += 4.0 * inv_e * (a[c] - x[c]) * w * e;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{assemble_r, PriorKind};
    use crate::problem::{AnchorSet, MeasurementSet, NoiseModel, Observation, VariancePolicy};
    use proptest::prelude::*;

    fn problem(anchors: DMatrix<f64>, groups: Vec<Vec<(usize, f64)>>, sigma: f64) -> ProblemData {
        let m = anchors.ncols();
        let times = (0..groups.len()).map(|t| t as f64).collect();
        let groups = groups
            .into_iter()
            .map(|g| g.into_iter().map(|(anchor, distance)| Observation { anchor, distance }).collect())
            .collect();
        ProblemData::new(
            AnchorSet::with_default_ids(anchors).unwrap(),
            MeasurementSet::new(times, groups, m).unwrap(),
            NoiseModel::new(sigma, VariancePolicy::SquaredConstant).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let p = problem(DMatrix::zeros(2, 1), vec![vec![(0, 5.0)]], 1.0);
        let x = DVector::from_column_slice(&[3.0, 4.0]);
        assert_eq!(predict(&p, 0, x.as_view())[0], 25.0);
        assert_eq!(predict(&p, 0, DVector::zeros(2).as_view())[0], 0.0);
        let p3 = problem(DMatrix::from_element(3, 1, 1.0), vec![vec![(0, 1.0)]], 1.0);
        assert_eq!(predict(&p3, 0, DVector::zeros(3).as_view())[0], 3.0);
    }

    #[test]
    fn jacobian_examples() {
        let p = problem(DMatrix::zeros(2, 1), vec![vec![(0, 5.0)]], 1.0);
        let j = jacobian(&p, 0, DVector::from_column_slice(&[3.0, 4.0]).as_view());
        assert_eq!(j, DMatrix::from_row_slice(1, 2, &[6.0, 8.0]));
        let j0 = jacobian(&p, 0, DVector::zeros(2).as_view());
        assert_eq!(j0, DMatrix::zeros(1, 2));
    }

    #[test]
    fn exact_measurements_have_zero_residual() {
        let anchors = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 4.0, 0.0, 0.0, 3.0]);
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let d: Vec<f64> = (0..3).map(|m| (anchors.column(m) - &x).norm()).collect();
        let p = problem(anchors, vec![vec![(0, d[0]), (1, d[1]), (2, d[2])]], 1.0);
        assert!(residual(&p, 0, x.as_view()).amax() < 1e-14);
        assert!(data_cost(&p, &x, 2).unwrap() < 1e-28);
    }

    // The model is defined for D ∈ {2, 3}; the one-dimensional examples are
    // embedded on the first axis with the second coordinate fixed at zero.
    #[test]
    fn one_dimensional_residual_and_cost() {
        let anchors = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 3.0, 0.0]);
        let p = problem(anchors, vec![vec![(0, 1.1), (1, 1.9)]], 1.0);
        let x = DVector::from_column_slice(&[1.0, 0.0]);
        let e = residual(&p, 0, x.as_view());
        assert!((e[0] - 0.21).abs() < 1e-14);
        assert!((e[1] + 0.39).abs() < 1e-14);
        let cost = data_cost(&p, &x, 2).unwrap();
        assert!((cost - 0.0981).abs() < 1e-14);
    }

    #[test]
    fn covariance_scaling_divides_cost() {
        let anchors = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 3.0, 0.0]);
        let x = DVector::from_column_slice(&[1.0, 0.5]);
        let g = vec![vec![(0, 1.1), (1, 1.9)]];
        let c1 = data_cost(&problem(anchors.clone(), g.clone(), 1.0), &x, 2).unwrap();
        let c4 = data_cost(&problem(anchors, g, 2.0), &x, 2).unwrap();
        assert!((c1 / 4.0 - c4).abs() < 1e-15);
    }

    #[test]
    fn permutation_within_time_index_is_invariant() {
        let anchors = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 4.0, 0.0, 0.0, 3.0]);
        let x = DVector::from_column_slice(&[1.3, -0.4]);
        let a = problem(anchors.clone(), vec![vec![(0, 1.0), (1, 2.0), (2, 3.0)]], 0.7);
        let b = problem(anchors, vec![vec![(2, 3.0), (0, 1.0), (1, 2.0)]], 0.7);
        assert_eq!(data_cost(&a, &x, 2).unwrap(), data_cost(&b, &x, 2).unwrap());
    }

    #[test]
    fn total_cost_without_prior_is_data_cost() {
        let anchors = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 4.0, 0.0, 0.0, 3.0]);
        let p = problem(anchors, vec![vec![(0, 1.0), (1, 2.0)], vec![(2, 3.0)]], 0.7);
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let theta = DVector::from_column_slice(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(total_cost(&p, &prior, &theta).unwrap(), data_cost(&p, &theta, 2).unwrap());
    }

    fn central_diff(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn residual_forms_agree(
            a in proptest::collection::vec(-5.0..5.0f64, 12),
            x in proptest::collection::vec(-5.0..5.0f64, 3),
            d in proptest::collection::vec(0.0..8.0f64, 4),
        ) {
            let anchors = DMatrix::from_column_slice(3, 4, &a);
            let p = problem(anchors, vec![(0..4).map(|m| (m, d[m])).collect()], 1.0);
            let x = DVector::from_column_slice(&x);
            let e1 = residual(&p, 0, x.as_view());
            let e2 = residual_expanded(&p, 0, x.as_view());
            let scale = 1.0 + e1.amax();
            prop_assert!((e1 - e2).amax() / scale < 1e-12);
        }

        #[test]
        fn jacobian_matches_finite_differences(
            a in proptest::collection::vec(-5.0..5.0f64, 12),
            x in proptest::collection::vec(-5.0..5.0f64, 3),
        ) {
            let anchors = DMatrix::from_column_slice(3, 4, &a);
            let p = problem(anchors, vec![(0..4).map(|m| (m, 1.0)).collect()], 1.0);
            let x = DVector::from_column_slice(&x);
            let j = jacobian(&p, 0, x.as_view());
            for m in 0..4 {
                let fd = central_diff(|y| predict(&p, 0, y.as_view())[m], &x, 1e-6);
                let row = j.row(m).transpose();
                prop_assert!((&row - &fd).amax() <= 1e-6 * (1.0 + row.amax()));
            }
        }

        #[test]
        fn gradient_matches_finite_differences(
            seed in any::<u64>(),
            kind in prop_oneof![Just(PriorKind::None), Just(PriorKind::ZeroVelocity), Just(PriorKind::ConstantVelocity)],
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let anchors = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-3.0..3.0));
            let groups = (0..5).map(|_| (0..4).map(|m| (m, rng.random_range(0.5..4.0))).collect()).collect();
            let p = problem(anchors, groups, 0.8);
            let prior = MotionPrior::isotropic(kind, 2, 0.3).unwrap();
            let k = prior.state_dim();
            let theta = DVector::from_fn(5 * k, |_, _| rng.random_range(-2.0..2.0));
            let r = assemble_r(&prior, p.times()).unwrap();
            let g = cost_gradient(&p, &r, &theta).unwrap();
            let fd = central_diff(|t| total_cost(&p, &prior, t).unwrap(), &theta, 1e-6);
            prop_assert!((&g - &fd).amax() <= 1e-6 * (1.0 + g.amax()), "{} vs {}", g, fd);
        }
    }
}
