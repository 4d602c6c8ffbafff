//! Per-site operator bases and their structure constants.
//!
//! Every on-site dimension `n >= 2` gets a Hermitian basis `E_0 = 1,
//! E_1, ..., E_{n^2-1}` that is orthonormal for the tracial inner product
//! `<A, B> = tr(A* B) / n`.  For `n = 2` this is the Pauli basis `x, y, z`;
//! for larger `n` the generalized Gell-Mann matrices scaled by
//! `sqrt(n / 2)`.  Structure constants `E_a E_b = sum_c f_{ab}^c E_c` are
//! computed once per dimension and cached; the cache is read-only after
//! initialization, so lookups are cheap and thread-safe.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Structure data for one on-site dimension.
#[derive(Debug)]
pub struct SiteAlgebra {
    dim: usize,
    /// Basis matrices; index 0 is the identity.
    mats: Vec<DMatrix<Complex64>>,
    /// `prod[a][b]` lists `(c, f)` with `E_a E_b = sum f * E_c`.
    prod: Vec<Vec<Vec<(usize, Complex64)>>>,
    /// Operator norms of the basis matrices.
    op_norms: Vec<f64>,
}

impl SiteAlgebra {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis elements including the identity (`n^2`).
    pub fn basis_len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn matrix(&self, a: usize) -> &DMatrix<Complex64> {
        &self.mats[a]
    }

    /// Expansion of `E_a E_b` in the basis (indices may include 0).
    pub fn product(&self, a: usize, b: usize) -> &[(usize, Complex64)] {
        &self.prod[a][b]
    }

    pub fn op_norm(&self, a: usize) -> f64 {
        self.op_norms[a]
    }

    /// Expansion coefficients of an arbitrary `n x n` matrix `M` in the
    /// basis: `M = sum_a c_a E_a` with `c_a = tr(E_a M) / n`.
    pub fn expand(&self, m: &DMatrix<Complex64>) -> Vec<Complex64> {
        let n = self.dim;
        (0..self.basis_len())
            .map(|a| {
                let mut tr = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for k in 0..n {
                        tr += self.mats[a][(i, k)] * m[(k, i)];
                    }
                }
                tr / n as f64
            })
            .collect()
    }
}

static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SiteAlgebra>>>> = OnceLock::new();

/// The cached algebra for on-site dimension `n`.
pub fn site_algebra(n: usize) -> Arc<SiteAlgebra> {
    assert!(n >= 2, "on-site dimension must be at least 2");
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("site algebra cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(build_site_algebra(n)))
        .clone()
}

fn build_site_algebra(n: usize) -> SiteAlgebra {
    let mats = basis_matrices(n);
    let count = mats.len();
    let mut prod = vec![vec![Vec::new(); count]; count];
    for a in 0..count {
        for b in 0..count {
            let m = &mats[a] * &mats[b];
            let mut expansion = Vec::new();
            for (c, mat_c) in mats.iter().enumerate() {
                let mut tr = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for k in 0..n {
                        tr += mat_c[(i, k)] * m[(k, i)];
                    }
                }
                let f = tr / n as f64;
                if f.norm() > 1e-15 {
                    expansion.push((c, f));
                }
            }
            prod[a][b] = expansion;
        }
    }
    let op_norms = mats
        .iter()
        .map(|m| {
            let gram = m.adjoint() * m;
            let eig = gram.symmetric_eigen();
            eig.eigenvalues
                .iter()
                .fold(0.0f64, |acc, &l| acc.max(l.max(0.0)))
                .sqrt()
        })
        .collect();
    SiteAlgebra {
        dim: n,
        mats,
        prod,
        op_norms,
    }
}

/// The Hermitian basis for dimension `n`: identity, then for each pair
/// `k < l` the symmetric and antisymmetric off-diagonal generators, then the
/// diagonal generators, all scaled so `tr(E_a E_b) / n = delta_ab`.
///
/// For `n = 2` the order is exactly `1, x, y, z`.
fn basis_matrices(n: usize) -> Vec<DMatrix<Complex64>> {
    let scale = (n as f64 / 2.0).sqrt();
    let mut mats = Vec::with_capacity(n * n);
    mats.push(DMatrix::identity(n, n));
    for k in 0..n {
        for l in (k + 1)..n {
            let mut x = DMatrix::zeros(n, n);
            x[(k, l)] = Complex64::new(scale, 0.0);
            x[(l, k)] = Complex64::new(scale, 0.0);
            mats.push(x);
            let mut y = DMatrix::zeros(n, n);
            y[(k, l)] = Complex64::new(0.0, -scale);
            y[(l, k)] = Complex64::new(0.0, scale);
            mats.push(y);
        }
    }
    for m in 1..n {
        let norm = (n as f64 / (m * (m + 1)) as f64).sqrt();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..m {
            d[(i, i)] = Complex64::new(norm, 0.0);
        }
        d[(m, m)] = Complex64::new(-(m as f64) * norm, 0.0);
        mats.push(d);
    }
    mats
}

/// Conventional names for basis indices: `x, y, z` for qubits, `e{k}`
/// otherwise.
pub fn op_name(dim: usize, index: usize) -> String {
    if dim == 2 {
        match index {
            1 => return "x".into(),
            2 => return "y".into(),
            3 => return "z".into(),
            _ => {}
        }
    }
    format!("e{index}")
}

/// Parse an on-site operator name (`x`, `y`, `z`, or `e{k}`).
pub fn parse_op_name(dim: usize, name: &str) -> Option<usize> {
    let index = match name {
        "x" => Some(1),
        "y" => Some(2),
        "z" => Some(3),
        _ => name.strip_prefix('e').and_then(|k| k.parse::<usize>().ok()),
    }?;
    if index >= 1 && index < dim * dim {
        Some(index)
    } else {
        None
    }
}
