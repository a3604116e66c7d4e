//! Global optimality certificate.
//!
//! Given a candidate `θ̂`, the dual variables follow in closed form from the
//! residuals, the certificate matrix
//! `H = (1/E)Q⁽ᵍ⁾ + (1/N)R⁽ᵍ⁾ + ρA₀⁽ᵍ⁾ + Σₙ λₙAₙ⁽ᵍ⁾` inherits the
//! block-tridiagonal arrowhead pattern, and positive semidefiniteness is decided
//! by a block LDLᵀ recursion in `O(N (K+1)³)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{build_matrices, lift, LiftedMatrices};
use crate::linalg::ArrowheadMatrix;
use crate::model::{data_cost, residual, TrajectoryEstimate};
use crate::prior::{prior_energy, MotionPrior};
use crate::problem::ProblemData;

/// Largest matrix the dense oracle will factor.
pub const DENSE_ORACLE_LIMIT: usize = 5000;

/// Lagrange multipliers of the lifted problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    /// One multiplier per substitution constraint.
    pub lambda: Vec<f64>,
    /// Multiplier of the homogenization constraint.
    pub rho: f64,
}

/// `λₙ = −(2/E) 1ᵀΣₙ⁻¹eₙ` and `ρ = −f(θ̂) − r(θ̂)`.
pub fn compute_duals(estimate: &TrajectoryEstimate, problem: &ProblemData, prior: &MotionPrior) -> Result<DualVariables> {
    let theta = check_estimate(estimate, problem, prior)?;
    let k = prior.state_dim();
    let d = problem.dim();
    let inv_e = 1.0 / problem.num_measurements() as f64;
    let lambda = (0..problem.num_times())
        .map(|n| {
            let e = residual(problem, n, theta.rows(n * k, d));
            let s: f64 = e.iter().zip(problem.inv_variances(n)).map(|(e, w)| w * e).sum();
            -2.0 * inv_e * s
        })
        .collect();
    let rho = -data_cost(problem, &theta, k)? - prior_energy(prior, problem.times(), &theta)?;
    Ok(DualVariables { lambda, rho })
}

fn check_estimate(estimate: &TrajectoryEstimate, problem: &ProblemData, prior: &MotionPrior) -> Result<DVector<f64>> {
    if estimate.state_dim != prior.state_dim() || estimate.dim != problem.dim() {
        return Err(Error::Dimension {
            expected: prior.state_dim(),
            got: estimate.state_dim,
        });
    }
    let want = problem.num_times() * prior.state_dim();
    if estimate.theta.len() != want {
        return Err(Error::Dimension { expected: want, got: estimate.theta.len() });
    }
    Ok(estimate.theta())
}

/// Assembles `H(ρ, λ)` in arrowhead form with `K+1` blocks.
pub fn assemble_h(duals: &DualVariables, lifted: &LiftedMatrices) -> Result<ArrowheadMatrix> {
    let n_times = lifted.num_blocks();
    if duals.lambda.len() != n_times {
        return Err(Error::Dimension { expected: n_times, got: duals.lambda.len() });
    }
    let (d, k) = (lifted.dim, lifted.state_dim);
    let inv_e = 1.0 / lifted.num_measurements as f64;
    let inv_n = 1.0 / n_times as f64;
    let mut h = lifted.q.clone();
    h.body.scale(inv_e);
    for i in 0..n_times {
        h.arrow_mut(i).scale_mut(inv_e);
    }
    h.corner *= inv_e;
    for i in 0..n_times {
        let mut blk = h.body.diag_mut(i);
        let r = lifted.r.diag(i);
        for c in 0..k {
            for rr in 0..k {
                blk[(rr, c)] += inv_n * r[(rr, c)];
            }
        }
        for c in 0..d {
            blk[(c, c)] += duals.lambda[i];
        }
        if i + 1 < n_times {
            let ru = lifted.r.upper(i);
            let mut up = h.body.upper_mut(i);
            for c in 0..k {
                for rr in 0..k {
                    up[(rr, c)] += inv_n * ru[(rr, c)];
                }
            }
        }
        h.arrow_mut(i)[k] -= 0.5 * duals.lambda[i];
    }
    h.corner += duals.rho;
    Ok(h)
}

/// `‖H ĝ‖_∞ / (1 + ‖ĝ‖_∞)`.
pub fn check_stationarity(h: &ArrowheadMatrix, g: &DVector<f64>) -> f64 {
    h.mul_vec(g).amax() / (1.0 + g.amax())
}

/// Stored factors of `H + βI = L D Lᵀ`, where `L` has unit lower-triangular
/// diagonal blocks `Jₙ`, sub-diagonal blocks `Lₙ` at `(n+1, n)` and the border
/// row `[l₁ᵀ … l_Nᵀ 1]`.
#[derive(Clone, Debug)]
pub struct ArrowheadFactorization {
    pub j: Vec<DMatrix<f64>>,
    pub d: Vec<DVector<f64>>,
    pub l: Vec<DMatrix<f64>>,
    pub arrow: Vec<DVector<f64>>,
    pub delta: f64,
}

impl ArrowheadFactorization {
    pub fn lower_dense(&self) -> DMatrix<f64> {
        let n = self.j.len();
        let b = self.j.first().map_or(0, |j| j.nrows());
        let size = n * b + 1;
        let mut m = DMatrix::zeros(size, size);
        for i in 0..n {
            m.view_mut((i * b, i * b), (b, b)).copy_from(&self.j[i]);
            if i + 1 < n {
                m.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(&self.l[i]);
            }
            for c in 0..b {
                m[(size - 1, i * b + c)] = self.arrow[i][c];
            }
        }
        m[(size - 1, size - 1)] = 1.0;
        m
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.d.iter().flat_map(|d| d.iter().copied()).collect();
        v.push(self.delta);
        DVector::from_vec(v)
    }

    /// `L D Lᵀ`, dense.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let l = self.lower_dense();
        &l * DMatrix::from_diagonal(&self.diagonal()) * l.transpose()
    }
}

/// Outcome of the LDLᵀ positive-semidefiniteness test.
#[derive(Clone, Debug)]
pub struct PsdResult {
    pub psd: bool,
    /// A pivot fell inside the numerical-zero band; no verdict.
    pub marginal: bool,
    /// Smallest pivot encountered (including the corner when reached).
    pub min_diag: f64,
    /// Blocks fully processed before exit.
    pub completed_blocks: usize,
    pub factors: Option<ArrowheadFactorization>,
}

/// Pivots below this, relative to the matching diagonal entry of `H + βI`,
/// are treated as numerically zero.
pub const PIVOT_TOL: f64 = 1e-14;

/// Unit lower-triangular `J` and diagonal `D` with `S = J D Jᵀ`. Stops at the
/// first pivot that is negative or below `tol[c]` and returns its index.
fn small_ldl(s: &DMatrix<f64>, tol: &[f64]) -> (DMatrix<f64>, DVector<f64>, Option<usize>) {
    let b = s.nrows();
    let mut j = DMatrix::identity(b, b);
    let mut d = DVector::zeros(b);
    for c in 0..b {
        let mut piv = s[(c, c)];
        for k in 0..c {
            piv -= j[(c, k)] * j[(c, k)] * d[k];
        }
        d[c] = piv;
        if piv <= tol[c] {
            return (j, d, Some(c));
        }
        for r in c + 1..b {
            let mut v = s[(r, c)];
            for k in 0..c {
                v -= j[(r, k)] * j[(c, k)] * d[k];
            }
            j[(r, c)] = v / piv;
        }
    }
    (j, d, None)
}

/// Tests `H + βI ⪰ 0` with the block LDLᵀ recursion, exiting at the first
/// negative pivot. Only the previous block's factors are kept unless
/// `keep_factors` is set.
pub fn psd_arrowhead(h: &ArrowheadMatrix, beta: f64, keep_factors: bool) -> PsdResult {
    let n = h.num_blocks();
    let b = h.block_size();
    let zero_band = |diag: f64| PIVOT_TOL * (diag + beta).abs().max(f64::MIN_POSITIVE);
    let mut stored = keep_factors.then(|| ArrowheadFactorization {
        j: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        l: Vec::with_capacity(n.saturating_sub(1)),
        arrow: Vec::with_capacity(n),
        delta: 0.0,
    });
    let mut min_diag = f64::INFINITY;
    // (Lₙ₋₁, Dₙ₋₁, lₙ₋₁) from the previous block
    let mut prev: Option<(DMatrix<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut delta = h.corner + beta;
    let finish = |psd: bool, marginal: bool, min_diag: f64, done: usize, stored: Option<ArrowheadFactorization>| PsdResult {
        psd,
        marginal,
        min_diag,
        completed_blocks: done,
        factors: stored.filter(|_| psd),
    };
    for i in 0..n {
        let mut s = h.body.diag(i).clone_owned();
        for k in 0..b {
            s[(k, k)] += beta;
        }
        let mut rhs_arrow = h.arrow(i).clone_owned();
        if let Some((lp, dp, ap)) = &prev {
            let ld = lp * DMatrix::from_diagonal(dp);
            s -= &ld * lp.transpose();
            rhs_arrow -= &ld * ap;
        }
        let tol: Vec<f64> = (0..b).map(|k| zero_band(h.body.diag(i)[(k, k)])).collect();
        let (j, d, fail) = small_ldl(&s, &tol);
        if let Some(c) = fail {
            let piv = d[c];
            min_diag = min_diag.min(piv);
            let marginal = piv.abs() <= tol[c];
            return finish(false, marginal, min_diag, i, stored);
        }
        min_diag = min_diag.min(d.min());
        // J y = v, then divide by D
        let solve = |v: &DVector<f64>| -> DVector<f64> {
            let y = j.solve_lower_triangular(v).expect("unit diagonal");
            y.component_div(&d)
        };
        let arrow = solve(&rhs_arrow);
        delta -= arrow.dot(&arrow.component_mul(&d));
        let next_l = (i + 1 < n).then(|| {
            // Lₙᵀ = Dₙ⁻¹ Jₙ⁻¹ Hₙ,ₙ₊₁
            let up = h.body.upper(i).clone_owned();
            let y = j.solve_lower_triangular(&up).expect("unit diagonal");
            let mut lt = y;
            for r in 0..b {
                lt.row_mut(r).scale_mut(1.0 / d[r]);
            }
            lt.transpose()
        });
        if let Some(f) = stored.as_mut() {
            f.j.push(j.clone());
            f.d.push(d.clone());
            f.arrow.push(arrow.clone());
            if let Some(l) = &next_l {
                f.l.push(l.clone());
            }
        }
        prev = next_l.map(|l| (l, d, arrow));
    }
    min_diag = min_diag.min(delta);
    if let Some(f) = stored.as_mut() {
        f.delta = delta;
    }
    if delta.abs() <= zero_band(h.corner) {
        return finish(false, true, min_diag, n, stored);
    }
    finish(delta > 0.0, false, min_diag, n, stored)
}

/// Smallest eigenvalue of the densified matrix.
pub fn dense_min_eig_oracle(h: &ArrowheadMatrix) -> Result<f64> {
    if h.dim() > DENSE_ORACLE_LIMIT {
        return Err(Error::TooLarge { size: h.dim(), limit: DENSE_ORACLE_LIMIT });
    }
    Ok(h.to_dense().symmetric_eigenvalues().min())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    /// Diagonal shift applied before the LDLᵀ test.
    pub beta: f64,
    /// Largest admissible scaled stationarity residual.
    pub stationarity_threshold: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            stationarity_threshold: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    NotCertified,
    NumericallyMarginal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertTiming {
    pub duals_seconds: f64,
    pub assemble_seconds: f64,
    pub psd_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub duals: DualVariables,
    pub psd: bool,
    pub min_diag: f64,
    pub completed_blocks: usize,
    pub stationarity_residual: f64,
    pub beta_used: f64,
    pub duality_gap: f64,
    pub verdict: Verdict,
    pub timing: CertTiming,
}

impl CertificateReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// Full certificate pipeline: duals, `H`, stationarity, LDLᵀ test.
pub fn certify(
    estimate: &TrajectoryEstimate,
    problem: &ProblemData,
    prior: &MotionPrior,
    config: &CertifyConfig,
) -> Result<CertificateReport> {
    if estimate.diverged || estimate.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    if !(config.beta >= 0.0) {
        return Err(Error::Invalid(format!("beta must be nonnegative, got {}", config.beta)));
    }
    let t0 = Instant::now();
    let duals = compute_duals(estimate, problem, prior)?;
    let t1 = Instant::now();
    let lifted = build_matrices(problem, prior)?;
    let h = assemble_h(&duals, &lifted)?;
    let g = lift(&estimate.theta(), problem.dim(), prior.state_dim())?;
    let stationarity_residual = check_stationarity(&h, &g.g);
    drop(lifted);
    let t2 = Instant::now();
    let psd = psd_arrowhead(&h, config.beta, false);
    let t3 = Instant::now();
    let cost = data_cost(problem, &estimate.theta(), prior.state_dim())?
        + prior_energy(prior, problem.times(), &estimate.theta())?;
    let verdict = if !(stationarity_residual < config.stationarity_threshold) {
        Verdict::NotCertified
    } else if psd.marginal {
        Verdict::NumericallyMarginal
    } else if psd.psd {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    };
    Ok(CertificateReport {
        duality_gap: (cost + duals.rho).abs(),
        duals,
        psd: psd.psd,
        min_diag: psd.min_diag,
        completed_blocks: psd.completed_blocks,
        stationarity_residual,
        beta_used: config.beta,
        verdict,
        timing: CertTiming {
            duals_seconds: (t1 - t0).as_secs_f64(),
            assemble_seconds: (t2 - t1).as_secs_f64(),
            psd_seconds: (t3 - t2).as_secs_f64(),
        },
    })
}

/// Explicit stationarity system `[A₁ĝ … A_Nĝ A₀ĝ] [λ; ρ] = −((1/E)Q + (1/N)R) ĝ`
/// as a dense `F_g × (N+1)` matrix and right-hand side. Intended for small
/// problems.
pub fn stationarity_system(lifted: &LiftedMatrices, g: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = lifted.num_blocks();
    let f = lifted.size();
    if f * (n + 1) > DENSE_ORACLE_LIMIT * DENSE_ORACLE_LIMIT {
        return Err(Error::TooLarge { size: f, limit: DENSE_ORACLE_LIMIT });
    }
    let mut a = DMatrix::zeros(f, n + 1);
    for i in 0..n {
        a.set_column(i, &lifted.constraint_apply(i, g));
    }
    a.set_column(n, &lifted.homogenizer_apply(g));
    let rhs = -(lifted.q.mul_vec(g) / lifted.num_measurements as f64 + lifted.r_apply(g) / n as f64);
    Ok((a, rhs))
}
