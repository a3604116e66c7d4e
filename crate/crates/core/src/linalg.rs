//! Block-structured symmetric matrices.
//!
//! Two layouts appear throughout the crate:
//!
//! - [`BlockTridiag`]: symmetric block-tridiagonal matrices with square blocks of
//!   a fixed size. Used for the motion-prior matrix and the Gauss-Newton normal
//!   matrix.
//! - [`ArrowheadMatrix`]: a block-tridiagonal body bordered by one dense row and
//!   column (the arrow) and a scalar corner. Used for the lifted cost and the
//!   certificate matrix.
//!
//! Blocks are stored contiguously in column-major order so that a problem with
//! a million states costs a handful of allocations rather than millions.

use nalgebra::{Cholesky, DMatrix, DMatrixView, DMatrixViewMut, DVector, DVectorView, DVectorViewMut};

/// Symmetric block-tridiagonal matrix; only diagonal blocks and the blocks
/// directly above the diagonal are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiag {
    n: usize,
    bs: usize,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl BlockTridiag {
    pub fn zeros(n: usize, bs: usize) -> Self {
        Self {
            n,
            bs,
            diag: vec![0.0; n * bs * bs],
            upper: vec![0.0; n.saturating_sub(1) * bs * bs],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    /// Side length of the full matrix.
    pub fn dim(&self) -> usize {
        self.n * self.bs
    }

    fn span(&self, i: usize) -> std::ops::Range<usize> {
        let b2 = self.bs * self.bs;
        i * b2..(i + 1) * b2
    }

    pub fn diag(&self, i: usize) -> DMatrixView<'_, f64> {
        let r = self.span(i);
        DMatrixView::from_slice(&self.diag[r], self.bs, self.bs)
    }

    pub fn diag_mut(&mut self, i: usize) -> DMatrixViewMut<'_, f64> {
        let r = self.span(i);
        DMatrixViewMut::from_slice(&mut self.diag[r], self.bs, self.bs)
    }

    /// Block at position `(i, i + 1)`.
    pub fn upper(&self, i: usize) -> DMatrixView<'_, f64> {
        let r = self.span(i);
        DMatrixView::from_slice(&self.upper[r], self.bs, self.bs)
    }

    pub fn upper_mut(&mut self, i: usize) -> DMatrixViewMut<'_, f64> {
        let r = self.span(i);
        DMatrixViewMut::from_slice(&mut self.upper[r], self.bs, self.bs)
    }

    pub fn scale(&mut self, s: f64) {
        self.diag.iter_mut().chain(self.upper.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim());
        let bs = self.bs;
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.n {
            let xi = x.rows(i * bs, bs);
            let mut yi = self.diag(i) * xi;
            if i + 1 < self.n {
                yi += self.upper(i) * x.rows((i + 1) * bs, bs);
            }
            if i > 0 {
                yi += self.upper(i - 1).tr_mul(&x.rows((i - 1) * bs, bs));
            }
            y.rows_mut(i * bs, bs).copy_from(&yi);
        }
        y
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let bs = self.bs;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.n {
            m.view_mut((i * bs, i * bs), (bs, bs)).copy_from(&self.diag(i));
            if i + 1 < self.n {
                let u = self.upper(i);
                m.view_mut((i * bs, (i + 1) * bs), (bs, bs)).copy_from(&u);
                m.view_mut(((i + 1) * bs, i * bs), (bs, bs)).copy_from(&u.transpose());
            }
        }
        m
    }

    /// Whether every diagonal block equals its transpose exactly.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let d = self.diag(i);
            d == d.transpose()
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.diag.iter().chain(&self.upper).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn heap_bytes(&self) -> usize {
        (self.diag.capacity() + self.upper.capacity()) * std::mem::size_of::<f64>()
    }

    /// Block Cholesky factorization `A = L Lᵀ` with `L` block lower-bidiagonal.
    ///
    /// Fails with the index of the first block whose Schur complement is not
    /// numerically positive definite (pivot below `1e-14` relative to the
    /// block's largest diagonal entry).
    pub fn cholesky(&self) -> Result<BlockCholesky, usize> {
        let bs = self.bs;
        let b2 = bs * bs;
        let mut diag_l = vec![0.0; self.n * b2];
        let mut sub = vec![0.0; self.n.saturating_sub(1) * b2];
        let mut prev_sub: Option<DMatrix<f64>> = None;
        for i in 0..self.n {
            let mut s = self.diag(i).clone_owned();
            if let Some(c) = &prev_sub {
                s -= c * c.transpose();
            }
            let scale = (0..bs).fold(0.0_f64, |m, k| m.max(s[(k, k)].abs()));
            let chol = Cholesky::new(s).ok_or(i)?;
            let l = chol.l();
            let min_pivot = (0..bs).fold(f64::INFINITY, |m, k| m.min(l[(k, k)] * l[(k, k)]));
            if !(min_pivot > 1e-14 * scale) {
                return Err(i);
            }
            if i + 1 < self.n {
                // L_{i+1,i} = U_iᵀ L_ii⁻ᵀ, i.e. solve L_ii X = U_i and transpose.
                let x = l
                    .solve_lower_triangular(&self.upper(i).clone_owned())
                    .ok_or(i)?;
                let c = x.transpose();
                sub[i * b2..(i + 1) * b2].copy_from_slice(c.as_slice());
                prev_sub = Some(c);
            }
            diag_l[i * b2..(i + 1) * b2].copy_from_slice(l.as_slice());
        }
        Ok(BlockCholesky {
            n: self.n,
            bs,
            diag_l,
            sub,
        })
    }
}

/// Factor produced by [`BlockTridiag::cholesky`]. Storage mirrors the input
/// pattern exactly: no fill-in outside the block-bidiagonal structure.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    n: usize,
    bs: usize,
    diag_l: Vec<f64>,
    sub: Vec<f64>,
}

impl BlockCholesky {
    fn diag_l(&self, i: usize) -> DMatrixView<'_, f64> {
        let b2 = self.bs * self.bs;
        DMatrixView::from_slice(&self.diag_l[i * b2..(i + 1) * b2], self.bs, self.bs)
    }

    fn sub(&self, i: usize) -> DMatrixView<'_, f64> {
        let b2 = self.bs * self.bs;
        DMatrixView::from_slice(&self.sub[i * b2..(i + 1) * b2], self.bs, self.bs)
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let bs = self.bs;
        let mut y = rhs.clone();
        for i in 0..self.n {
            let mut r = y.rows(i * bs, bs).clone_owned();
            if i > 0 {
                r -= self.sub(i - 1) * y.rows((i - 1) * bs, bs);
            }
            let yi = self
                .diag_l(i)
                .solve_lower_triangular(&r)
                .expect("nonsingular by construction");
            y.rows_mut(i * bs, bs).copy_from(&yi);
        }
        for i in (0..self.n).rev() {
            let mut r = y.rows(i * bs, bs).clone_owned();
            if i + 1 < self.n {
                r -= self.sub(i).tr_mul(&y.rows((i + 1) * bs, bs));
            }
            let xi = self
                .diag_l(i)
                .tr_solve_lower_triangular(&r)
                .expect("nonsingular by construction");
            y.rows_mut(i * bs, bs).copy_from(&xi);
        }
        y
    }

    /// Dense lower-triangular factor, for inspection in tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let bs = self.bs;
        let mut m = DMatrix::zeros(self.n * bs, self.n * bs);
        for i in 0..self.n {
            m.view_mut((i * bs, i * bs), (bs, bs)).copy_from(&self.diag_l(i));
            if i + 1 < self.n {
                m.view_mut(((i + 1) * bs, i * bs), (bs, bs)).copy_from(&self.sub(i));
            }
        }
        m
    }
}

/// Symmetric matrix with a block-tridiagonal body and one dense border row
/// and column. The border sits last, so the full size is `n * bs + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrowheadMatrix {
    pub body: BlockTridiag,
    arrow: Vec<f64>,
    pub corner: f64,
}

impl ArrowheadMatrix {
    pub fn zeros(n: usize, bs: usize) -> Self {
        Self {
            body: BlockTridiag::zeros(n, bs),
            arrow: vec![0.0; n * bs],
            corner: 0.0,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.body.num_blocks()
    }

    pub fn block_size(&self) -> usize {
        self.body.block_size()
    }

    pub fn dim(&self) -> usize {
        self.body.dim() + 1
    }

    /// Border entries coupling block `i` to the last row.
    pub fn arrow(&self, i: usize) -> DVectorView<'_, f64> {
        let bs = self.block_size();
        DVectorView::from_slice(&self.arrow[i * bs..(i + 1) * bs], bs)
    }

    pub fn arrow_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        let bs = self.block_size();
        DVectorViewMut::from_slice(&mut self.arrow[i * bs..(i + 1) * bs], bs)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim());
        let m = self.body.dim();
        let head = x.rows(0, m).clone_owned();
        let last = x[m];
        let arrow = DVectorView::from_slice(&self.arrow, m);
        let mut y = DVector::zeros(m + 1);
        let mut body = self.body.mul_vec(&head);
        body.axpy(last, &arrow, 1.0);
        y.rows_mut(0, m).copy_from(&body);
        y[m] = arrow.dot(&head) + self.corner * last;
        y
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.body.dim();
        let mut d = DMatrix::zeros(m + 1, m + 1);
        d.view_mut((0, 0), (m, m)).copy_from(&self.body.to_dense());
        for k in 0..m {
            d[(k, m)] = self.arrow[k];
            d[(m, k)] = self.arrow[k];
        }
        d[(m, m)] = self.corner;
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.arrow
            .iter()
            .fold(self.body.max_abs().max(self.corner.abs()), |m, v| m.max(v.abs()))
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: f64) {
        for i in 0..self.num_blocks() {
            let mut d = self.body.diag_mut(i);
            for k in 0..d.nrows() {
                d[(k, k)] += s;
            }
        }
        self.corner += s;
    }

    pub fn heap_bytes(&self) -> usize {
        self.body.heap_bytes() + self.arrow.capacity() * std::mem::size_of::<f64>()
    }
}
