//! Fixtures shared by the benchmarks.

use rangecert::sim::simulate;
use rangecert::solver::{ground_truth_init, solve};
use rangecert::{MotionPrior, NoiseModel, PriorKind, ProblemData, SimConfig, SolveConfig, TrajectoryEstimate, VariancePolicy};

/// A simulated constant-velocity problem with `n` times and its solution from
/// the ground truth. Uses the propagated noise policy so the solution stays
/// certifiable at large `n` and the PSD test runs to completion.
pub fn fixture(n: usize) -> (ProblemData, MotionPrior, TrajectoryEstimate) {
    let sim = simulate(&SimConfig { num_times: n, rng_seed: 7, ..Default::default() }).expect("valid sim config");
    let noise = NoiseModel::new(1e-3, VariancePolicy::Propagated).expect("positive sigma");
    let problem = sim.problem(noise).expect("consistent problem");
    let prior = MotionPrior::isotropic(PriorKind::ConstantVelocity, 2, 0.2).expect("positive sigma_a");
    let init = ground_truth_init(&problem, prior.state_dim()).expect("ground truth present");
    let est = solve(&problem, &prior, &SolveConfig { max_iterations: 10, ..Default::default() }, &init)
        .expect("full-rank problem");
    (problem, prior, est)
}
