//! Homogeneous QCQP lifting of the range-only objective.
//!
//! Each state gets one substitution variable `zₙ = ‖xₙ‖²` and a single
//! homogenization variable `ℓ = 1` closes the vector:
//! `g = (θ₁, z₁, …, θ_N, z_N, ℓ)`. Writing `C̃ₙ = [2Yₙᵀ, −1]` and
//! `bₙ = d̃ₙ² − γₙ`, the residual becomes `eₙ = C̃ₙ (xₙ, zₙ) + bₙ ℓ`, so the data
//! cost is the quadratic form `(1/E) gᵀ Q g` subject to `gᵀAₙg = 0`
//! (`‖xₙ‖² = zₙ ℓ`) and `gᵀA₀g = 1`.
//!
//! Padded matrices are kept in block form: `Q` as an arrowhead with `(K+1)`
//! blocks and `R` in its native `K×K` blocks with the padding applied by index.

use std::io::Write;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::{ArrowheadMatrix, BlockTridiag};
use crate::model::check_dims;
use crate::prior::{assemble_r, MotionPrior};
use crate::problem::ProblemData;

/// `g = (θ₁, z₁, …, θ_N, z_N, ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedVector {
    pub g: DVector<f64>,
    pub dim: usize,
    pub state_dim: usize,
}

impl LiftedVector {
    pub fn block_size(&self) -> usize {
        self.state_dim + 1
    }

    pub fn num_blocks(&self) -> usize {
        (self.g.len() - 1) / self.block_size()
    }

    pub fn position(&self, n: usize) -> DVectorView<'_, f64> {
        self.g.rows(n * self.block_size(), self.dim)
    }

    pub fn z(&self, n: usize) -> f64 {
        self.g[n * self.block_size() + self.state_dim]
    }

    pub fn ell(&self) -> f64 {
        self.g[self.g.len() - 1]
    }
}

/// Lifts a stacked state vector, computing `zₙ = ‖xₙ‖²` and setting `ℓ = 1`.
pub fn lift(theta: &DVector<f64>, dim: usize, state_dim: usize) -> Result<LiftedVector> {
    if state_dim < dim || !theta.len().is_multiple_of(state_dim) {
        return Err(Error::Dimension { expected: state_dim, got: theta.len() });
    }
    let n = theta.len() / state_dim;
    let b = state_dim + 1;
    let mut g = DVector::zeros(n * b + 1);
    for i in 0..n {
        let th = theta.rows(i * state_dim, state_dim);
        g.rows_mut(i * b, state_dim).copy_from(&th);
        g[i * b + state_dim] = th.rows(0, dim).norm_squared();
    }
    g[n * b] = 1.0;
    Ok(LiftedVector { g, dim, state_dim })
}

/// Lifted cost and prior matrices (unscaled: the objective is
/// `(1/E) gᵀQg + (1/N) gᵀRg`).
#[derive(Clone, Debug)]
pub struct LiftedMatrices {
    pub dim: usize,
    pub state_dim: usize,
    pub num_measurements: usize,
    /// `Q⁽ᵍ⁾` in block form; its off-diagonal blocks are zero.
    pub q: ArrowheadMatrix,
    /// Unpadded prior matrix with `K×K` blocks.
    pub r: BlockTridiag,
}

/// Builds `Q⁽ᵍ⁾` and `R⁽ᵍ⁾` for a problem and prior.
pub fn build_matrices(problem: &ProblemData, prior: &MotionPrior) -> Result<LiftedMatrices> {
    check_dims(problem, prior)?;
    let r = assemble_r(prior, problem.times())?;
    Ok(LiftedMatrices {
        dim: problem.dim(),
        state_dim: prior.state_dim(),
        num_measurements: problem.num_measurements(),
        q: build_q(problem, prior.state_dim()),
        r,
    })
}

fn build_q(problem: &ProblemData, state_dim: usize) -> ArrowheadMatrix {
    let d = problem.dim();
    let b = state_dim + 1;
    let n_times = problem.num_times();
    let mut q = ArrowheadMatrix::zeros(n_times, b);
    let mut q0 = 0.0;
    for n in 0..n_times {
        let mut blk = DMatrix::<f64>::zeros(b, b);
        let mut arrow = DVector::<f64>::zeros(b);
        for (o, &w) in problem.observations(n).iter().zip(problem.inv_variances(n)) {
            let a = problem.anchors.position(o.anchor);
            let bm = o.distance * o.distance - a.norm_squared();
            for r in 0..d {
                for c in 0..=r {
                    blk[(r, c)] += 4.0 * w * a[r] * a[c];
                }
                blk[(r, state_dim)] -= 2.0 * w * a[r];
                arrow[r] += 2.0 * w * a[r] * bm;
            }
            blk[(state_dim, state_dim)] += w;
            arrow[state_dim] -= w * bm;
            q0 += w * bm * bm;
        }
        for r in 0..d {
            blk[(state_dim, r)] = blk[(r, state_dim)];
            for c in 0..r {
                blk[(c, r)] = blk[(r, c)];
            }
        }
        q.body.diag_mut(n).copy_from(&blk);
        q.arrow_mut(n).copy_from(&arrow);
    }
    q.corner = q0;
    q
}

impl LiftedMatrices {
    pub fn block_size(&self) -> usize {
        self.state_dim + 1
    }

    pub fn num_blocks(&self) -> usize {
        self.q.num_blocks()
    }

    /// Size `F_g = N(K+1) + 1` of the lifted vector.
    pub fn size(&self) -> usize {
        self.q.dim()
    }

    pub fn q_block(&self, n: usize) -> DMatrixView<'_, f64> {
        self.q.body.diag(n)
    }

    /// `R⁽ᵍ⁾`: `R` with zero rows and columns at the substitution entries. The
    /// border of the returned arrowhead is zero.
    pub fn r_padded(&self) -> ArrowheadMatrix {
        let k = self.state_dim;
        let mut out = ArrowheadMatrix::zeros(self.num_blocks(), k + 1);
        for n in 0..self.num_blocks() {
            out.body.diag_mut(n).view_mut((0, 0), (k, k)).copy_from(&self.r.diag(n));
            if n + 1 < self.num_blocks() {
                out.body.upper_mut(n).view_mut((0, 0), (k, k)).copy_from(&self.r.upper(n));
            }
        }
        out
    }

    fn theta_of(&self, g: &DVector<f64>) -> DVector<f64> {
        let (k, b) = (self.state_dim, self.block_size());
        let mut theta = DVector::zeros(self.num_blocks() * k);
        for n in 0..self.num_blocks() {
            theta.rows_mut(n * k, k).copy_from(&g.rows(n * b, k));
        }
        theta
    }

    /// `R⁽ᵍ⁾ g` without materializing the padded matrix.
    pub fn r_apply(&self, g: &DVector<f64>) -> DVector<f64> {
        let (k, b) = (self.state_dim, self.block_size());
        let rt = self.r.mul_vec(&self.theta_of(g));
        let mut out = DVector::zeros(g.len());
        for n in 0..self.num_blocks() {
            out.rows_mut(n * b, k).copy_from(&rt.rows(n * k, k));
        }
        out
    }

    pub fn q_quad(&self, g: &DVector<f64>) -> f64 {
        self.q.quad_form(g)
    }

    pub fn r_quad(&self, g: &DVector<f64>) -> f64 {
        self.r.quad_form(&self.theta_of(g))
    }

    /// `Aₙ⁽ᵍ⁾ g`: nonzero only at block `n`'s position and substitution entries
    /// and at `ℓ`.
    pub fn constraint_apply(&self, n: usize, g: &DVector<f64>) -> DVector<f64> {
        let (d, k, b) = (self.dim, self.state_dim, self.block_size());
        let last = g.len() - 1;
        let mut out = DVector::zeros(g.len());
        out.rows_mut(n * b, d).copy_from(&g.rows(n * b, d));
        out[n * b + k] = -0.5 * g[last];
        out[last] = -0.5 * g[n * b + k];
        out
    }

    /// `gᵀ Aₙ⁽ᵍ⁾ g = ‖xₙ‖² − zₙ ℓ`.
    pub fn constraint_value(&self, n: usize, g: &DVector<f64>) -> f64 {
        let (d, k, b) = (self.dim, self.state_dim, self.block_size());
        g.rows(n * b, d).norm_squared() - g[n * b + k] * g[g.len() - 1]
    }

    /// `A₀⁽ᵍ⁾ g`.
    pub fn homogenizer_apply(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(g.len());
        out[g.len() - 1] = g[g.len() - 1];
        out
    }

    /// Dense `Aₙ⁽ᵍ⁾`, for small test problems.
    pub fn constraint_dense(&self, n: usize) -> DMatrix<f64> {
        let (d, k, b) = (self.dim, self.state_dim, self.block_size());
        let f = self.size();
        let mut a = DMatrix::zeros(f, f);
        for i in 0..d {
            a[(n * b + i, n * b + i)] = 1.0;
        }
        a[(n * b + k, f - 1)] = -0.5;
        a[(f - 1, n * b + k)] = -0.5;
        a
    }

    pub fn homogenizer_dense(&self) -> DMatrix<f64> {
        let f = self.size();
        let mut a = DMatrix::zeros(f, f);
        a[(f - 1, f - 1)] = 1.0;
        a
    }

    pub fn heap_bytes(&self) -> usize {
        self.q.heap_bytes() + self.r.heap_bytes()
    }
}

/// Writes the nonzeros of an arrowhead matrix as `row col value` lines
/// (both triangles).
pub fn write_coo<W: Write>(mut out: W, m: &ArrowheadMatrix) -> std::io::Result<()> {
    let b = m.block_size();
    let last = m.dim() - 1;
    for n in 0..m.num_blocks() {
        for (blk, col0) in [(m.body.diag(n), n * b)]
            .into_iter()
            .chain((n + 1 < m.num_blocks()).then(|| (m.body.upper(n), (n + 1) * b)))
        {
            for r in 0..b {
                for c in 0..b {
                    let v = blk[(r, c)];
                    if v != 0.0 {
                        writeln!(out, "{} {} {}", n * b + r, col0 + c, v)?;
                        if col0 != n * b {
                            writeln!(out, "{} {} {}", col0 + c, n * b + r, v)?;
                        }
                    }
                }
            }
        }
        for (r, &v) in m.arrow(n).iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "{} {} {}", n * b + r, last, v)?;
                writeln!(out, "{} {} {}", last, n * b + r, v)?;
            }
        }
    }
    if m.corner != 0.0 {
        writeln!(out, "{last} {last} {}", m.corner)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{data_cost, total_cost};
    use crate::prior::{prior_energy, PriorKind};
    use crate::problem::{AnchorSet, MeasurementSet, NoiseModel, Observation, VariancePolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, dim: usize) -> ProblemData {
        let anchors = DMatrix::from_fn(dim, m, |_, _| rng.random_range(-3.0..3.0));
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 + rng.random_range(0.0..0.2)).collect();
        let groups = (0..n)
            .map(|_| {
                let cnt = rng.random_range(1..=m);
                (0..cnt)
                    .map(|a| Observation { anchor: a, distance: rng.random_range(0.1..5.0) })
                    .collect()
            })
            .collect();
        let noise = NoiseModel::new(rng.random_range(0.1..2.0), VariancePolicy::Propagated).unwrap();
        ProblemData::new(
            AnchorSet::with_default_ids(anchors).unwrap(),
            MeasurementSet::new(times, groups, m).unwrap(),
            noise,
            None,
        )
        .unwrap()
    }

    #[test]
    fn lift_example() {
        let theta = DVector::from_column_slice(&[3.0, 4.0, 0.0, 0.0]);
        let g = lift(&theta, 2, 2).unwrap();
        assert_eq!(g.z(0), 25.0);
        assert_eq!(g.z(1), 0.0);
        assert_eq!(g.ell(), 1.0);
        assert_eq!(g.g.len(), 7);
    }

    #[test]
    fn cost_identity_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let dim = 2 + trial % 2;
            let n = rng.random_range(1..=20);
            let p = random_problem(&mut rng, n, 5, dim);
            let kind = PriorKind::ALL[trial % 3];
            let prior = MotionPrior::isotropic(kind, dim, rng.random_range(0.05..2.0)).unwrap();
            let k = prior.state_dim();
            let lm = build_matrices(&p, &prior).unwrap();
            let theta = DVector::from_fn(n * k, |_, _| rng.random_range(-3.0..3.0));
            let g = lift(&theta, dim, k).unwrap();
            let e = p.num_measurements() as f64;
            let lifted = lm.q_quad(&g.g) / e + lm.r_quad(&g.g) / n as f64;
            let direct = total_cost(&p, &prior, &theta).unwrap();
            assert!((lifted - direct).abs() < 1e-10 * (1.0 + direct), "{lifted} vs {direct}");
            let f = data_cost(&p, &theta, k).unwrap();
            assert!((lm.q_quad(&g.g) / e - f).abs() < 1e-10 * (1.0 + f));
            let r = prior_energy(&prior, p.times(), &theta).unwrap();
            let padded = lm.r_padded().quad_form(&g.g) / n as f64;
            assert!((padded - r).abs() < 1e-10 * (1.0 + r));
            for i in 0..n {
                assert!(lm.constraint_value(i, &g.g).abs() < 1e-12 * (1.0 + g.z(i)));
            }
            assert_eq!(lm.homogenizer_apply(&g.g).dot(&g.g), 1.0);
        }
    }

    #[test]
    fn q0_is_weighted_offset_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 6, 4, 2);
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let lm = build_matrices(&p, &prior).unwrap();
        let mut q0 = 0.0;
        for n in 0..p.num_times() {
            for (o, w) in p.observations(n).iter().zip(p.inv_variances(n)) {
                let b = o.distance.powi(2) - p.anchors.position(o.anchor).norm_squared();
                q0 += w * b * b;
            }
        }
        assert!((lm.q.corner - q0).abs() < 1e-12 * q0);
    }

    #[test]
    fn single_anchor_at_origin() {
        // One reading d̃ = 1 to an anchor at the origin with unit variance:
        // Y = 0 so the position rows vanish and e = 1 − z.
        let p = ProblemData::new(
            AnchorSet::with_default_ids(DMatrix::zeros(2, 1)).unwrap(),
            MeasurementSet::new(vec![0.0], vec![vec![Observation { anchor: 0, distance: 1.0 }]], 1).unwrap(),
            NoiseModel::new(1.0, VariancePolicy::SquaredConstant).unwrap(),
            None,
        )
        .unwrap();
        let prior = MotionPrior::isotropic(PriorKind::None, 2, 1.0).unwrap();
        let lm = build_matrices(&p, &prior).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want[(2, 2)] = 1.0;
        want[(2, 3)] = -1.0;
        want[(3, 2)] = -1.0;
        want[(3, 3)] = 1.0;
        assert_eq!(lm.q.to_dense(), want);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let theta = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let g = lift(&theta, 2, 2).unwrap();
            let e = 1.0 - theta.norm_squared();
            assert!((lm.q_quad(&g.g) - e * e).abs() < 1e-12 * (1.0 + e * e));
        }
    }

    #[test]
    fn dense_forms_are_symmetric_and_match_block_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, 4, 3, 3);
        let prior = MotionPrior::isotropic(PriorKind::ConstantVelocity, 3, 0.4).unwrap();
        let lm = build_matrices(&p, &prior).unwrap();
        let q = lm.q.to_dense();
        let r = lm.r_padded().to_dense();
        assert_eq!(q, q.transpose());
        assert_eq!(r, r.transpose());
        let theta = DVector::from_fn(4 * 6, |_, _| rng.random_range(-1.0..1.0));
        let g = lift(&theta, 3, 6).unwrap().g;
        assert!((lm.r_apply(&g) - &r * &g).amax() < 1e-12 * (1.0 + r.amax()));
        for n in 0..4 {
            let a = lm.constraint_dense(n);
            assert_eq!(a, a.transpose());
            assert!((lm.constraint_apply(n, &g) - &a * &g).amax() < 1e-15);
            // the constraint only touches block n and the corner
            for (i, j) in (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |j| (i, j))) {
                if a[(i, j)] != 0.0 {
                    let in_block = |x: usize| x / 7 == n || x == a.nrows() - 1;
                    assert!(in_block(i) && in_block(j));
                }
            }
        }
        assert!((lm.homogenizer_apply(&g) - lm.homogenizer_dense() * &g).amax() == 0.0);
        // Q blocks are Gram forms, hence positive semidefinite
        for n in 0..4 {
            let eig = lm.q_block(n).clone_owned().symmetric_eigen().eigenvalues;
            assert!(eig.min() > -1e-9 * eig.amax());
        }
    }

    #[test]
    fn coo_dump_lists_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 3, 3, 2);
        let prior = MotionPrior::isotropic(PriorKind::ZeroVelocity, 2, 0.4).unwrap();
        let lm = build_matrices(&p, &prior).unwrap();
        let mut buf = Vec::new();
        write_coo(&mut buf, &lm.r_padded()).unwrap();
        let dense = lm.r_padded().to_dense();
        let nnz = dense.iter().filter(|v| **v != 0.0).count();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), nnz);
    }
}
