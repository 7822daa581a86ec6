//! Symmetric positive-definite block-tridiagonal matrices.
//!
//! The inverse kernel matrix of a Markovian GP prior and every Hessian built on
//! top of it share this sparsity. Factorization, solves, the log-determinant and
//! the tridiagonal band of the inverse all run in time linear in the number of
//! blocks.
//!
//! Only the sub-diagonal blocks are stored: `lower[k]` is the block at block-row
//! `k + 1`, block-column `k`. The super-diagonal is its transpose.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTriDiagSPD {
    dim: usize,
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub blocks: Vec<DVector<f64>>,
}

/// Lower block-bidiagonal Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    dim: usize,
    /// Lower-triangular diagonal blocks of `L`.
    diag: Vec<DMatrix<f64>>,
    /// `sub[k]` is block `(k + 1, k)` of `L`.
    sub: Vec<DMatrix<f64>>,
}

impl BlockTriDiagSPD {
    pub fn new(diag: Vec<DMatrix<f64>>, lower: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = diag
            .first()
            .map(|d| d.nrows())
            .ok_or_else(|| Error::InvalidGrid("block-tridiagonal matrix needs at least one block".into()))?;
        if lower.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch { expected: diag.len() - 1, got: lower.len() });
        }
        for b in diag.iter().chain(lower.iter()) {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: if b.nrows() != dim { b.nrows() } else { b.ncols() },
                });
            }
        }
        Ok(Self { dim, diag, lower })
    }

    pub fn zeros(n_blocks: usize, dim: usize) -> Self {
        Self {
            dim,
            diag: vec![DMatrix::zeros(dim, dim); n_blocks],
            lower: vec![DMatrix::zeros(dim, dim); n_blocks.saturating_sub(1)],
        }
    }

    pub fn identity(n_blocks: usize, dim: usize) -> Self {
        let mut m = Self::zeros(n_blocks, dim);
        for d in &mut m.diag {
            d.fill_with_identity();
        }
        m
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self) -> &[DMatrix<f64>] {
        &self.diag
    }

    pub fn lower(&self) -> &[DMatrix<f64>] {
        &self.lower
    }

    pub fn diag_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.diag
    }

    pub fn lower_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.lower
    }

    /// Block `(k + 1, k)`.
    pub fn sub_block(&self, k: usize) -> &DMatrix<f64> {
        &self.lower[k]
    }

    /// Block `(k, k + 1)`, i.e. the transpose of the stored sub-diagonal block.
    pub fn super_block(&self, k: usize) -> DMatrix<f64> {
        self.lower[k].transpose()
    }

    /// `M x` without assembling the dense matrix.
    pub fn mul_vec(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check_vector(x)?;
        let n = self.n_blocks();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut y = &self.diag[k] * &x.blocks[k];
            if k > 0 {
                y += &self.lower[k - 1] * &x.blocks[k - 1];
            }
            if k + 1 < n {
                y += self.lower[k].tr_mul(&x.blocks[k + 1]);
            }
            out.push(y);
        }
        Ok(BlockVector { blocks: out })
    }

    /// Dense `(K+1)D × (K+1)D` matrix, for evaluation and oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim;
        let n = self.n_blocks() * d;
        let mut m = DMatrix::zeros(n, n);
        for (k, b) in self.diag.iter().enumerate() {
            m.view_mut((k * d, k * d), (d, d)).copy_from(b);
        }
        for (k, b) in self.lower.iter().enumerate() {
            m.view_mut(((k + 1) * d, k * d), (d, d)).copy_from(b);
            m.view_mut((k * d, (k + 1) * d), (d, d)).copy_from(&b.transpose());
        }
        m
    }

    /// Extract the tridiagonal band of a dense matrix (lower triangle is read).
    pub fn from_dense(m: &DMatrix<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || m.nrows() != m.ncols() || !m.nrows().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: m.nrows() });
        }
        let n = m.nrows() / dim;
        let diag = (0..n).map(|k| m.view((k * dim, k * dim), (dim, dim)).into_owned()).collect();
        let lower =
            (0..n.saturating_sub(1)).map(|k| m.view(((k + 1) * dim, k * dim), (dim, dim)).into_owned()).collect();
        Self::new(diag, lower)
    }

    /// Frobenius norm of the asymmetry of the diagonal blocks.
    pub fn asymmetry(&self) -> f64 {
        self.diag.iter().map(|b| (b - b.transpose()).norm_squared()).sum::<f64>().sqrt()
    }

    pub fn factorize(&self) -> Result<BlockCholesky> {
        let n = self.n_blocks();
        let d = self.dim;
        let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n {
            let mut pivot = self.diag[k].clone();
            if k > 0 {
                let s: &DMatrix<f64> = &sub[k - 1];
                pivot -= s * s.transpose();
            }
            let chol = Cholesky::new(pivot).ok_or(Error::NotPositiveDefinite { block: k })?;
            let l = chol.l();
            if k + 1 < n {
                // S Lᵀ = M_{k+1,k}  <=>  L Sᵀ = M_{k+1,k}ᵀ
                let st = l
                    .solve_lower_triangular(&self.lower[k].transpose())
                    .ok_or(Error::NotPositiveDefinite { block: k })?;
                sub.push(st.transpose());
            }
            diag.push(l);
        }
        Ok(BlockCholesky { dim: d, diag, sub })
    }

    fn check_vector(&self, x: &BlockVector) -> Result<()> {
        if x.blocks.len() != self.n_blocks() {
            return Err(Error::DimensionMismatch { expected: self.n_blocks(), got: x.blocks.len() });
        }
        if let Some(b) = x.blocks.iter().find(|b| b.len() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: b.len() });
        }
        Ok(())
    }
}

impl BlockVector {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros(n_blocks: usize, dim: usize) -> Self {
        Self { blocks: vec![DVector::zeros(dim); n_blocks] }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let n: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut v = DVector::zeros(n);
        let mut i = 0;
        for b in &self.blocks {
            v.rows_mut(i, b.len()).copy_from(b);
            i += b.len();
        }
        v
    }

    pub fn from_dense(v: &DVector<f64>, dim: usize) -> Self {
        Self { blocks: v.as_slice().chunks(dim).map(DVector::from_column_slice).collect() }
    }
}

impl BlockCholesky {
    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    /// Diagonal blocks of the factor.
    pub fn diag_factors(&self) -> &[DMatrix<f64>] {
        &self.diag
    }

    /// Sub-diagonal blocks of the factor.
    pub fn sub_factors(&self) -> &[DMatrix<f64>] {
        &self.sub
    }

    pub fn solve(&self, b: &BlockVector) -> Result<BlockVector> {
        let cols: Vec<DMatrix<f64>> =
            b.blocks.iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect();
        let x = self.solve_blocks(&cols)?;
        Ok(BlockVector { blocks: x.into_iter().map(|m| m.column(0).into_owned()).collect() })
    }

    /// Solve `M X = B` for a block column of right-hand sides (each `D × m`).
    pub fn solve_blocks(&self, b: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.n_blocks();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let m = b.first().map(|x| x.ncols()).unwrap_or(0);
        if let Some(bad) = b.iter().find(|x| x.nrows() != self.dim || x.ncols() != m) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: bad.nrows() });
        }
        // forward: L z = b
        let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut rhs = b[k].clone();
            if k > 0 {
                rhs -= &self.sub[k - 1] * &z[k - 1];
            }
            self.diag[k].solve_lower_triangular_mut(&mut rhs);
            z.push(rhs);
        }
        // backward: Lᵀ x = z
        for k in (0..n).rev() {
            if k + 1 < n {
                let upd = self.sub[k].tr_mul(&z[k + 1]);
                z[k] -= upd;
            }
            self.diag[k].tr_solve_lower_triangular_mut(&mut z[k]);
        }
        Ok(z)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.diag.iter().map(|l| l.diagonal().iter().map(|x| x.ln()).sum::<f64>()).sum::<f64>()
    }

    /// Tridiagonal band of `M⁻¹`, by the backward recursion on the factor.
    pub fn partial_inverse(&self) -> BlockTriDiagSPD {
        let n = self.n_blocks();
        let d = self.dim;
        let eye = DMatrix::<f64>::identity(d, d);
        // G⁻¹ for every diagonal factor block
        let ginv: Vec<DMatrix<f64>> = self
            .diag
            .iter()
            .map(|g| {
                let mut x = eye.clone();
                g.solve_lower_triangular_mut(&mut x);
                x
            })
            .collect();
        let mut diag = vec![DMatrix::zeros(d, d); n];
        let mut lower = vec![DMatrix::zeros(d, d); n.saturating_sub(1)];
        diag[n - 1] = ginv[n - 1].tr_mul(&ginv[n - 1]);
        for k in (0..n - 1).rev() {
            // Σ_{k,k+1} = −G_k⁻ᵀ S_kᵀ Σ_{k+1,k+1}
            let w = ginv[k].tr_mul(&self.sub[k].transpose());
            let upper = -(&w * &diag[k + 1]);
            // Σ_{k,k} = G_k⁻ᵀ G_k⁻¹ − G_k⁻ᵀ S_kᵀ Σ_{k+1,k}
            let mut dk = ginv[k].tr_mul(&ginv[k]) - &w * upper.transpose();
            dk = (&dk + dk.transpose()) * 0.5;
            diag[k] = dk;
            lower[k] = upper.transpose();
        }
        BlockTriDiagSPD { dim: d, diag, lower }
    }
}
