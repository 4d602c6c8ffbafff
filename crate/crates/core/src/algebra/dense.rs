//! Dense Kronecker-product backend.
//!
//! Realizes sparse operators as explicit matrices over an ordered site set
//! (row-major tensor indexing: the first site is the most significant
//! index).  The reverse direction — expanding a dense matrix back into
//! basis strings — walks the tensor factors depth-first, contracting one
//! site at a time against its basis and pruning branches that can no longer
//! produce coefficients above threshold.  Capped at [`DENSE_CAP_DEFAULT`]
//! dimensions by default so desk-scale experiments fail loudly instead of
//! thrashing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Lattice, SiteId};

use super::site_basis::site_algebra;
use super::{BasisString, LocalOperator, DEFAULT_PRUNE};

/// Default cap on the total Hilbert-space dimension of dense realizations.
pub const DENSE_CAP_DEFAULT: usize = 1 << 12;

/// A dense matrix realization of an operator over an ordered site list.
#[derive(Debug, Clone)]
pub struct DenseRealization {
    sites: Vec<SiteId>,
    dims: Vec<usize>,
    matrix: DMatrix<Complex64>,
}

impl DenseRealization {
    /// Realize `op` over `sites` (sorted ascending).  Errors if the operator
    /// support leaks outside `sites` or the total dimension exceeds `cap`.
    pub fn assemble(
        op: &LocalOperator,
        lattice: &Lattice,
        sites: &[SiteId],
        cap: usize,
    ) -> Result<Self> {
        let mut sites = sites.to_vec();
        sites.sort_unstable();
        sites.dedup();
        let support = op.support();
        if let Some(&outside) = support.iter().find(|s| !sites.contains(s)) {
            return Err(Error::Operator(format!(
                "operator supported on site {outside} outside the realization sites"
            )));
        }
        let dims: Vec<usize> = sites.iter().map(|&j| lattice.onsite_dim(j)).collect();
        let total: usize = dims.iter().product();
        if total > cap {
            return Err(Error::DenseCap { dim: total, cap });
        }
        let mut matrix = DMatrix::<Complex64>::zeros(total, total);
        for (string, &coeff) in op.terms() {
            let mut term = DMatrix::<Complex64>::from_element(1, 1, coeff);
            for (&site, &dim) in sites.iter().zip(&dims) {
                let alg = site_algebra(dim);
                let factor = string
                    .factors()
                    .iter()
                    .find(|&&(s, _)| s == site)
                    .map(|&(_, opix)| alg.matrix(opix).clone())
                    .unwrap_or_else(|| DMatrix::identity(dim, dim));
                term = term.kronecker(&factor);
            }
            matrix += term;
        }
        Ok(DenseRealization {
            sites,
            dims,
            matrix,
        })
    }

    pub fn from_matrix(sites: Vec<SiteId>, dims: Vec<usize>, matrix: DMatrix<Complex64>) -> Self {
        DenseRealization {
            sites,
            dims,
            matrix,
        }
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Operator norm (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        let gram = self.matrix.adjoint() * &self.matrix;
        let eig = gram.symmetric_eigen();
        eig.eigenvalues
            .iter()
            .fold(0.0f64, |acc, &l| acc.max(l.max(0.0)))
            .sqrt()
    }

    /// `<psi| A |psi>` for a normalized state vector.
    pub fn expectation(&self, psi: &DVector<Complex64>) -> Complex64 {
        (psi.adjoint() * &self.matrix * psi)[(0, 0)]
    }

    /// Expand the matrix back into basis strings, pruning coefficients at
    /// `threshold`.
    pub fn to_local_operator(&self, threshold: f64) -> LocalOperator {
        let mut out = LocalOperator::zero();
        let mut pattern = Vec::new();
        transform_rec(
            &self.matrix,
            &self.sites,
            &self.dims,
            threshold,
            &mut pattern,
            &mut out,
        );
        out.pruned(threshold)
    }
}

/// Expand a dense matrix over explicit `(sites, dims)` into basis-string
/// factors.  Intended for small gate supports.
pub fn expand_dense(
    matrix: &DMatrix<Complex64>,
    sites: &[SiteId],
    dims: &[usize],
) -> Vec<(Vec<(SiteId, usize)>, Complex64)> {
    let mut op = LocalOperator::zero();
    let mut pattern = Vec::new();
    transform_rec(matrix, sites, dims, DEFAULT_PRUNE * 0.01, &mut pattern, &mut op);
    op.terms()
        .map(|(s, c)| (s.factors().to_vec(), *c))
        .collect()
}

/// Depth-first tensor transform: contract the leading site index against its
/// basis, recurse on the remaining block.
///
/// The coefficient that a child block can still yield is bounded by
/// `sqrt(B) * max|entry|` with `B` the block dimension, which justifies the
/// branch pruning.
fn transform_rec(
    mat: &DMatrix<Complex64>,
    sites: &[SiteId],
    dims: &[usize],
    threshold: f64,
    pattern: &mut Vec<(SiteId, usize)>,
    out: &mut LocalOperator,
) {
    if sites.is_empty() {
        let coeff = mat[(0, 0)];
        if coeff.norm() > 0.0 {
            let string =
                BasisString::new(pattern.clone()).expect("transform patterns have distinct sites");
            out.add_term(string, coeff);
        }
        return;
    }
    let d = dims[0];
    let block = mat.nrows() / d;
    let alg = site_algebra(d);
    for a in 0..alg.basis_len() {
        let ea = alg.matrix(a);
        let mut child = DMatrix::<Complex64>::zeros(block, block);
        for p in 0..d {
            for q in 0..d {
                let f = ea[(p, q)];
                if f.norm() == 0.0 {
                    continue;
                }
                for x in 0..block {
                    for y in 0..block {
                        child[(x, y)] += f * mat[(q * block + x, p * block + y)];
                    }
                }
            }
        }
        child /= Complex64::new(d as f64, 0.0);
        let max_abs = child.iter().fold(0.0f64, |acc, c| acc.max(c.norm()));
        if max_abs * (block as f64).sqrt() <= threshold * 0.1 {
            continue;
        }
        if a != 0 {
            pattern.push((sites[0], a));
        }
        transform_rec(&child, &sites[1..], &dims[1..], threshold, pattern, out);
        if a != 0 {
            pattern.pop();
        }
    }
}
