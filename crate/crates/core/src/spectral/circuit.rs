//! Finite-depth circuits of local unitary gates.
//!
//! A circuit is a list of layers, each a set of gates with pairwise disjoint
//! supports.  Circuits act on operators by conjugation in the Heisenberg
//! picture — exactly, string by string — which keeps them usable far beyond
//! the dense diagonalization cap.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::LocalOperator;
use crate::currents::unitary_from_generator;
use crate::error::{Error, Result};
use crate::geometry::{Lattice, SiteId};

/// Unitarity tolerance for gate validation.
pub const GATE_UNITARITY_TOL: f64 = 1e-10;

/// A unitary gate on an explicit ordered list of sites.  The matrix is laid
/// out in row-major tensor order with the first listed site most
/// significant, matching the dense backend.
#[derive(Debug, Clone)]
pub struct Gate {
    sites: Vec<SiteId>,
    matrix: DMatrix<Complex64>,
}

impl Gate {
    pub fn new(sites: Vec<SiteId>, matrix: DMatrix<Complex64>, lattice: &Lattice) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Operator("a gate needs at least one site".into()));
        }
        let mut seen = sites.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != sites.len() {
            return Err(Error::Operator("gate sites must be distinct".into()));
        }
        let dim: usize = sites
            .iter()
            .map(|&j| {
                if j >= lattice.len() {
                    return Err(Error::Operator(format!("gate site {j} out of range")));
                }
                Ok(lattice.onsite_dim(j))
            })
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Operator(format!(
                "gate matrix is {}x{}, expected {dim}x{dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = (matrix.adjoint() * &matrix - DMatrix::<Complex64>::identity(dim, dim))
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.norm()));
        if defect > GATE_UNITARITY_TOL {
            return Err(Error::Operator(format!(
                "gate matrix is not unitary (defect {defect:e})"
            )));
        }
        Ok(Gate { sites, matrix })
    }

    /// `exp(iθK)` for a Hermitian on-gate generator `K`.
    pub fn from_generator(
        sites: Vec<SiteId>,
        k: &DMatrix<Complex64>,
        theta: f64,
        lattice: &Lattice,
    ) -> Result<Self> {
        let matrix = unitary_from_generator(k, theta)?;
        Gate::new(sites, matrix, lattice)
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn adjoint(&self) -> Gate {
        Gate {
            sites: self.sites.clone(),
            matrix: self.matrix.adjoint(),
        }
    }
}

/// The two-qubit swap gate matrix.
pub fn swap_matrix() -> DMatrix<Complex64> {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    DMatrix::from_row_slice(4, 4, &[l, o, o, o, o, o, l, o, o, l, o, o, o, o, o, l])
}

/// A finite-depth circuit: layers applied to states in listed order, so the
/// total unitary is `U = L_k ⋯ L_1`.
#[derive(Debug, Clone, Default)]
pub struct Circuit {
    layers: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new() -> Self {
        Circuit { layers: Vec::new() }
    }

    /// Append a layer; gates within a layer must have disjoint supports.
    pub fn push_layer(&mut self, gates: Vec<Gate>) -> Result<()> {
        let mut used: Vec<SiteId> = Vec::new();
        for gate in &gates {
            for &j in gate.sites() {
                if used.contains(&j) {
                    return Err(Error::Operator(format!(
                        "site {j} appears in two gates of the same layer"
                    )));
                }
                used.push(j);
            }
        }
        self.layers.push(gates);
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    /// Heisenberg conjugation `U A U†`.
    pub fn conjugate(&self, a: &LocalOperator, lattice: &Lattice) -> Result<LocalOperator> {
        let mut out = a.clone();
        for layer in &self.layers {
            for gate in layer {
                out = out.conjugated_on(gate.sites(), gate.matrix(), lattice)?;
            }
        }
        Ok(out)
    }

    /// Inverse conjugation `U† A U`.
    pub fn conjugate_adjoint(&self, a: &LocalOperator, lattice: &Lattice) -> Result<LocalOperator> {
        let mut out = a.clone();
        for layer in self.layers.iter().rev() {
            for gate in layer {
                let adj = gate.matrix().adjoint();
                out = out.conjugated_on(gate.sites(), &adj, lattice)?;
            }
        }
        Ok(out)
    }

    /// The reversed circuit built from adjoint gates; conjugating by it
    /// undoes this circuit.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            layers: self
                .layers
                .iter()
                .rev()
                .map(|layer| layer.iter().map(Gate::adjoint).collect())
                .collect(),
        }
    }

    /// Dense total unitary (for verification on small systems).
    pub fn unitary_dense(&self, lattice: &Lattice, cap: usize) -> Result<DMatrix<Complex64>> {
        let sites: Vec<SiteId> = (0..lattice.len()).collect();
        let total: usize = sites.iter().map(|&j| lattice.onsite_dim(j)).product();
        if total > cap {
            return Err(Error::DenseCap { dim: total, cap });
        }
        let mut u = DMatrix::<Complex64>::identity(total, total);
        for layer in &self.layers {
            for gate in layer {
                let dims: Vec<usize> = gate.sites().iter().map(|&j| lattice.onsite_dim(j)).collect();
                let strings = crate::algebra::dense::expand_dense(gate.matrix(), gate.sites(), &dims);
                let mut op = LocalOperator::zero();
                for (factors, coeff) in strings {
                    op.add_term(crate::algebra::BasisString::new(factors)?, coeff);
                }
                let dense =
                    crate::algebra::DenseRealization::assemble(&op, lattice, &sites, cap)?;
                u = dense.matrix() * u;
            }
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn swap_gate_conjugation_moves_operators() {
        let lat = Lattice::chain(2).unwrap();
        let mut circuit = Circuit::new();
        circuit
            .push_layer(vec![Gate::new(vec![0, 1], swap_matrix(), &lat).unwrap()])
            .unwrap();
        let x0 = LocalOperator::string(&[(0, 1)], c(1.0, 0.0)).unwrap();
        let x1 = LocalOperator::string(&[(1, 1)], c(1.0, 0.0)).unwrap();
        let moved = circuit.conjugate(&x0, &lat).unwrap();
        assert!(moved.sub(&x1).max_coeff() < 1e-14);
    }

    #[test]
    fn conjugate_then_adjoint_is_identity() {
        let lat = Lattice::chain(3).unwrap();
        let mut circuit = Circuit::new();
        // An entangling two-layer circuit.
        let k = DMatrix::from_row_slice(
            4,
            4,
            &[
                c(0.3, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.2, -0.1),
                c(0.0, 0.0), c(-0.3, 0.0), c(0.5, 0.0), c(0.0, 0.0),
                c(0.0, 0.0), c(0.5, 0.0), c(0.1, 0.0), c(0.0, 0.0),
                c(0.2, 0.1), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0),
            ],
        );
        circuit
            .push_layer(vec![Gate::from_generator(vec![0, 1], &k, 0.9, &lat).unwrap()])
            .unwrap();
        circuit
            .push_layer(vec![Gate::from_generator(vec![1, 2], &k, -0.4, &lat).unwrap()])
            .unwrap();
        let mut a = LocalOperator::string(&[(0, 1), (1, 3)], c(0.5, 0.0)).unwrap();
        a.add_assign(&LocalOperator::string(&[(2, 2)], c(0.0, -1.0)).unwrap());
        let round = circuit
            .conjugate_adjoint(&circuit.conjugate(&a, &lat).unwrap(), &lat)
            .unwrap();
        assert!(round.sub(&a).max_coeff() < 1e-12);
        // The inverse circuit does the same job.
        let round2 = circuit
            .inverse()
            .conjugate(&circuit.conjugate(&a, &lat).unwrap(), &lat)
            .unwrap();
        assert!(round2.sub(&a).max_coeff() < 1e-12);
    }

    #[test]
    fn sparse_conjugation_matches_dense_unitary() {
        let lat = Lattice::chain(3).unwrap();
        let mut circuit = Circuit::new();
        circuit
            .push_layer(vec![Gate::new(vec![0, 1], swap_matrix(), &lat).unwrap()])
            .unwrap();
        circuit
            .push_layer(vec![Gate::new(vec![1, 2], swap_matrix(), &lat).unwrap()])
            .unwrap();
        let a = LocalOperator::string(&[(0, 3), (2, 1)], c(0.7, 0.2)).unwrap();
        let sparse = circuit.conjugate(&a, &lat).unwrap();
        let u = circuit.unitary_dense(&lat, 64).unwrap();
        let sites = [0, 1, 2];
        let da = crate::algebra::DenseRealization::assemble(&a, &lat, &sites, 64).unwrap();
        let expect = &u * da.matrix() * u.adjoint();
        let ds = crate::algebra::DenseRealization::assemble(&sparse, &lat, &sites, 64).unwrap();
        assert!((expect - ds.matrix()).norm() < 1e-12);
    }

    #[test]
    fn overlapping_gates_in_layer_rejected() {
        let lat = Lattice::chain(3).unwrap();
        let mut circuit = Circuit::new();
        let err = circuit.push_layer(vec![
            Gate::new(vec![0, 1], swap_matrix(), &lat).unwrap(),
            Gate::new(vec![1, 2], swap_matrix(), &lat).unwrap(),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn non_unitary_gate_rejected() {
        let lat = Lattice::chain(1).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
        assert!(Gate::new(vec![0], m, &lat).is_err());
    }
}
