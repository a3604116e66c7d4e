//! Gaussian-process motion priors from linear time-varying SDEs.
//!
//! A prior contributes `r(θ) = (1/N) Σₙ eₙᵀ Wₙ⁻¹ eₙ` with
//! `eₙ = Φₙ,ₙ₋₁ θₙ₋₁ − θₙ (+ uₙ)`, where `Wₙ` is the process noise integrated
//! over the interval `[tₙ₋₁, tₙ]`. Because each factor couples only adjacent
//! states, `r(θ) = (1/N) θᵀ R θ` with `R` block tridiagonal.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// No regularization; the state is the position.
    None,
    /// White-noise velocity (Brownian position); the state is the position.
    ZeroVelocity,
    /// White-noise acceleration; the state is position then velocity.
    #[default]
    ConstantVelocity,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::None, PriorKind::ZeroVelocity, PriorKind::ConstantVelocity];

    pub fn state_dim(self, dim: usize) -> usize {
        match self {
            PriorKind::None | PriorKind::ZeroVelocity => dim,
            PriorKind::ConstantVelocity => 2 * dim,
        }
    }
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorKind::None => "none",
            PriorKind::ZeroVelocity => "zero-velocity",
            PriorKind::ConstantVelocity => "constant-velocity",
        })
    }
}

/// A motion prior with power-spectral density `Q_C` (`D×D`).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPrior {
    kind: PriorKind,
    q_c: DMatrix<f64>,
}

impl MotionPrior {
    pub fn new(kind: PriorKind, q_c: DMatrix<f64>) -> Result<Self> {
        let d = q_c.nrows();
        if q_c.ncols() != d {
            return Err(Error::Dimension { expected: d, got: q_c.ncols() });
        }
        if !(2..=3).contains(&d) {
            return Err(Error::Invalid(format!("prior dimension must be 2 or 3, got {d}")));
        }
        if q_c != q_c.transpose() || Cholesky::new(q_c.clone()).is_none() {
            return Err(Error::Invalid("Q_C must be symmetric positive definite".into()));
        }
        Ok(Self { kind, q_c })
    }

    /// `Q_C = σ_a I`.
    pub fn isotropic(kind: PriorKind, dim: usize, sigma_a: f64) -> Result<Self> {
        if !(sigma_a > 0.0) {
            return Err(Error::Invalid(format!("sigma_a must be positive, got {sigma_a}")));
        }
        Self::new(kind, DMatrix::identity(dim, dim) * sigma_a)
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn q_c(&self) -> &DMatrix<f64> {
        &self.q_c
    }

    /// Spatial dimension `D`.
    pub fn dim(&self) -> usize {
        self.q_c.nrows()
    }

    /// State dimension `K`.
    pub fn state_dim(&self) -> usize {
        self.kind.state_dim(self.dim())
    }
}

/// Transition matrix `Φ(t_to, t_from)`.
pub fn transition(kind: PriorKind, dim: usize, t_to: f64, t_from: f64) -> Result<DMatrix<f64>> {
    let dt = t_to - t_from;
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("transition needs t_to >= t_from, got {t_to} < {t_from}")));
    }
    Ok(match kind {
        PriorKind::None | PriorKind::ZeroVelocity => DMatrix::identity(dim, dim),
        PriorKind::ConstantVelocity => {
            let mut phi = DMatrix::identity(2 * dim, 2 * dim);
            for k in 0..dim {
                phi[(k, dim + k)] = dt;
            }
            phi
        }
    })
}

/// Process noise integrated over an interval of length `dt`.
pub fn interval_covariance(kind: PriorKind, q_c: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("interval length must be positive, got {dt}")));
    }
    let d = q_c.nrows();
    match kind {
        PriorKind::None => Err(Error::Invalid("the `none` prior has no interval covariance".into())),
        PriorKind::ZeroVelocity => Ok(q_c * dt),
        PriorKind::ConstantVelocity => {
            let mut w = DMatrix::zeros(2 * d, 2 * d);
            w.view_mut((0, 0), (d, d)).copy_from(&(q_c * (dt.powi(3) / 3.0)));
            w.view_mut((0, d), (d, d)).copy_from(&(q_c * (dt.powi(2) / 2.0)));
            w.view_mut((d, 0), (d, d)).copy_from(&(q_c * (dt.powi(2) / 2.0)));
            w.view_mut((d, d), (d, d)).copy_from(&(q_c * dt));
            Ok(w)
        }
    }
}

/// Everything one prior factor needs.
#[derive(Clone, Debug)]
pub struct IntervalFactors {
    pub phi: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub w_inv: DMatrix<f64>,
    /// Known input; zero for both shipped priors.
    pub u: DVector<f64>,
}

impl IntervalFactors {
    pub fn new(prior: &MotionPrior, t_from: f64, t_to: f64) -> Result<Self> {
        let phi = transition(prior.kind, prior.dim(), t_to, t_from)?;
        let w = interval_covariance(prior.kind, &prior.q_c, t_to - t_from)?;
        let w_inv = Cholesky::new(w.clone())
            .ok_or_else(|| Error::Domain(format!("interval covariance not positive definite (dt = {})", t_to - t_from)))?
            .inverse();
        let w_inv = (&w_inv + w_inv.transpose()) * 0.5;
        let u = DVector::zeros(prior.state_dim());
        Ok(Self { phi, w, w_inv, u })
    }

    /// `e = Φ θ_from − θ_to + u`.
    pub fn residual(&self, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        &self.phi * from - to + &self.u
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::Ordering { index: i + 1, prev: w[0], next: w[1] });
        }
    }
    Ok(())
}

/// Assembles `R` (unscaled; the cost uses `(1/N) θᵀ R θ`).
pub fn assemble_r(prior: &MotionPrior, times: &[f64]) -> Result<BlockTridiag> {
    check_times(times)?;
    let k = prior.state_dim();
    let mut r = BlockTridiag::zeros(times.len(), k);
    if prior.kind == PriorKind::None {
        return Ok(r);
    }
    for n in 1..times.len() {
        let f = IntervalFactors::new(prior, times[n - 1], times[n])?;
        let phi_t_winv = f.phi.transpose() * &f.w_inv;
        {
            let mut d = r.diag_mut(n - 1);
            d += &phi_t_winv * &f.phi;
        }
        {
            let mut d = r.diag_mut(n);
            d += &f.w_inv;
        }
        r.upper_mut(n - 1).copy_from(&(-phi_t_winv));
    }
    // exact symmetry of the diagonal blocks
    for n in 0..times.len() {
        let sym = {
            let d = r.diag(n);
            (d + d.transpose()) * 0.5
        };
        r.diag_mut(n).copy_from(&sym);
    }
    Ok(r)
}

/// `r(θ) = (1/N) Σₙ eₙᵀ Wₙ⁻¹ eₙ`, evaluated factor by factor.
pub fn prior_energy(prior: &MotionPrior, times: &[f64], theta: &DVector<f64>) -> Result<f64> {
    let k = prior.state_dim();
    let n = times.len();
    if theta.len() != n * k {
        return Err(Error::Dimension { expected: n * k, got: theta.len() });
    }
    check_times(times)?;
    if prior.kind == PriorKind::None {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 1..n {
        let f = IntervalFactors::new(prior, times[i - 1], times[i])?;
        let e = f.residual(&theta.rows((i - 1) * k, k).clone_owned(), &theta.rows(i * k, k).clone_owned());
        sum += e.dot(&(&f.w_inv * &e));
    }
    Ok(sum / n as f64)
}
