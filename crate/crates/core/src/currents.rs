//! Energy and charge currents.
//!
//! A Hamiltonian density is a 0-chain `h` whose boundary is the Hamiltonian
//! derivation `H`.  The energy current is the closed-form solution
//! `j^E = −½{h,h}` of the conservation equation `∂j^E = −{H,h}`; a charge
//! density `q` invariant under the dynamics (`{∂q,h} = 0`) likewise yields
//! the charge current `j = −{h,q}` with `∂j = −{H,q}`.  Solutions are
//! ambiguous up to exact 1-chains, and the contracting homotopy turns the
//! difference of two solutions into an explicit witness 2-chain.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::LocalOperator;
use crate::complex::{
    boundary, boundary_zero, graded_bracket, homotopy, Chain, Derivation, Graded,
};
use crate::error::{Error, Result};
use crate::geometry::Lattice;

/// Default tolerance for invariance residuals, measured against the
/// upper-bound norm.
pub const INVARIANCE_TOL: f64 = 1e-10;

/// A Hamiltonian density: a 0-chain of anti-self-adjoint traceless local
/// operators, with its boundary derivation cached.
#[derive(Debug, Clone)]
pub struct HamiltonianDensity {
    density: Chain,
    derivation: Derivation,
}

impl HamiltonianDensity {
    pub fn new(density: Chain, lattice: &Lattice) -> Result<Self> {
        if density.degree() != 0 {
            return Err(Error::Chain("a density must be a 0-chain".into()));
        }
        let defect = density.asa_defect().max(density.traceless_defect());
        if defect > 1e-12 {
            return Err(Error::Chain(format!(
                "density values must be traceless anti-self-adjoint \
                 (defect {defect:e})"
            )));
        }
        let derivation = boundary_zero(&density, lattice)?;
        Ok(HamiltonianDensity {
            density,
            derivation,
        })
    }

    pub fn density(&self) -> &Chain {
        &self.density
    }

    /// The Hamiltonian derivation `H = ∂₀h`.
    pub fn derivation(&self) -> &Derivation {
        &self.derivation
    }

    /// Total anti-self-adjoint operator `Σ_Y H^Y = Σ_j h_j`.
    pub fn total(&self) -> LocalOperator {
        self.derivation.total()
    }
}

/// A charge density: a 0-chain of anti-self-adjoint traceless operators,
/// optionally tagged with the symmetry it generates.
#[derive(Debug, Clone)]
pub struct ChargeDensity {
    density: Chain,
    symmetry: Option<String>,
}

impl ChargeDensity {
    pub fn new(density: Chain, symmetry: Option<String>) -> Result<Self> {
        if density.degree() != 0 {
            return Err(Error::Chain("a density must be a 0-chain".into()));
        }
        let defect = density.asa_defect().max(density.traceless_defect());
        if defect > 1e-12 {
            return Err(Error::Chain(format!(
                "charge density values must be traceless anti-self-adjoint \
                 (defect {defect:e})"
            )));
        }
        Ok(ChargeDensity { density, symmetry })
    }

    pub fn density(&self) -> &Chain {
        &self.density
    }

    pub fn symmetry(&self) -> Option<&str> {
        self.symmetry.as_deref()
    }

    pub fn derivation(&self, lattice: &Lattice) -> Result<Derivation> {
        boundary_zero(&self.density, lattice)
    }
}

fn expect_chain(g: Graded) -> Chain {
    match g {
        Graded::Chain(c) => c,
        Graded::Derivation(_) => unreachable!("bracket of chains is a chain"),
    }
}

/// Worst upper-bound norm across the entries of a chain: the metric used
/// for invariance residuals.
fn chain_norm_upper(c: &Chain, lattice: &Lattice) -> f64 {
    c.entries()
        .map(|(_, op)| op.norm_upper(lattice))
        .fold(0.0, f64::max)
}

/// Energy current `j^E = −½{h,h}`, the closed-form solution of
/// `∂j^E = −{H,h}`.
pub fn energy_current(h: &HamiltonianDensity, lattice: &Lattice) -> Result<Chain> {
    let hh = graded_bracket(
        &Graded::Chain(h.density.clone()),
        &Graded::Chain(h.density.clone()),
        lattice,
    )?;
    Ok(expect_chain(hh).scale(Complex64::new(-0.5, 0.0)))
}

/// Residual of the dynamical invariance `{∂q, h} = 0` that licenses the
/// closed-form charge current.
pub fn invariance_residual(
    h: &HamiltonianDensity,
    q: &ChargeDensity,
    lattice: &Lattice,
) -> Result<f64> {
    let dq = Graded::Derivation(q.derivation(lattice)?);
    let bracket = graded_bracket(&dq, &Graded::Chain(h.density.clone()), lattice)?;
    Ok(chain_norm_upper(&expect_chain(bracket), lattice))
}

/// Charge current `j = −{h,q}`, valid when the charge is conserved by the
/// dynamics; the invariance residual is checked first and reported on
/// failure.
pub fn charge_current(
    h: &HamiltonianDensity,
    q: &ChargeDensity,
    lattice: &Lattice,
) -> Result<Chain> {
    let residual = invariance_residual(h, q, lattice)?;
    if residual > INVARIANCE_TOL {
        return Err(Error::Tolerance {
            context: "charge density is not invariant under the dynamics ({∂q,h} ≠ 0)".into(),
            residual,
            tolerance: INVARIANCE_TOL,
        });
    }
    let hq = graded_bracket(
        &Graded::Chain(h.density.clone()),
        &Graded::Chain(q.density.clone()),
        lattice,
    )?;
    Ok(expect_chain(hq).scale(Complex64::new(-1.0, 0.0)))
}

/// Witness for the current ambiguity: an `m` with `∂m = j1 − j2`, produced
/// by the contracting homotopy.  Both inputs must solve the same
/// conservation equation (`∂j1 = ∂j2` within tolerance).
pub fn ambiguity_witness(j1: &Chain, j2: &Chain, lattice: &Lattice) -> Result<Chain> {
    let diff = j1.sub_chain(j2)?;
    let boundary_mismatch = chain_norm_upper(&boundary(&diff)?, lattice);
    if boundary_mismatch > INVARIANCE_TOL {
        return Err(Error::Tolerance {
            context: "currents solve different conservation equations (∂j1 ≠ ∂j2)".into(),
            residual: boundary_mismatch,
            tolerance: INVARIANCE_TOL,
        });
    }
    let witness = homotopy(&diff, lattice)?;
    let check = chain_norm_upper(&boundary(&witness)?.sub_chain(&diff)?, lattice);
    if check > INVARIANCE_TOL {
        return Err(Error::Tolerance {
            context: "homotopy witness fails to reproduce the current difference".into(),
            residual: check,
            tolerance: INVARIANCE_TOL,
        });
    }
    Ok(witness)
}

// -- group actions and symmetrization ---------------------------------------

/// A finite list of product unitaries acting site-wise, used for group
/// averaging.  Continuous groups enter through quadrature points (a 64-point
/// circle rule integrates the trigonometric polynomials produced by local
/// conjugations exactly).
#[derive(Debug, Clone)]
pub struct GroupAction {
    /// `elements[g][j]` is the unitary at site `j` for group element `g`.
    elements: Vec<Vec<DMatrix<Complex64>>>,
}

impl GroupAction {
    /// Same on-site unitaries applied at every site; one matrix per element.
    pub fn uniform(lattice: &Lattice, mats: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::Operator("group action needs at least one element".into()));
        }
        for mat in &mats {
            for j in 0..lattice.len() {
                let d = lattice.onsite_dim(j);
                if mat.nrows() != d || mat.ncols() != d {
                    return Err(Error::Operator(format!(
                        "group element is {}x{} but site {j} has dimension {d}",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
            }
        }
        let elements = mats
            .into_iter()
            .map(|m| (0..lattice.len()).map(|_| m.clone()).collect())
            .collect();
        Ok(GroupAction { elements })
    }

    /// U(1) quadrature: `exp(iθK)` for `points` equally spaced angles, with
    /// the Hermitian on-site generator `K`.
    pub fn u1_about(
        lattice: &Lattice,
        generator: &DMatrix<Complex64>,
        points: usize,
    ) -> Result<Self> {
        if points == 0 {
            return Err(Error::Operator("quadrature needs at least one point".into()));
        }
        let mats = (0..points)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
                unitary_from_generator(generator, theta)
            })
            .collect::<Result<Vec<_>>>()?;
        GroupAction::uniform(lattice, mats)
    }

    /// The two-element action `{1, U}`.
    pub fn z2(lattice: &Lattice, flip: DMatrix<Complex64>) -> Result<Self> {
        let id = DMatrix::identity(flip.nrows(), flip.ncols());
        GroupAction::uniform(lattice, vec![id, flip])
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Conjugate an operator by the product unitary of element `g`.
    pub fn apply(&self, g: usize, op: &LocalOperator, lattice: &Lattice) -> Result<LocalOperator> {
        let unitaries = self
            .elements
            .get(g)
            .ok_or_else(|| Error::Operator(format!("group element {g} out of range")))?;
        let mut out = op.clone();
        let support = op.support();
        for &j in &support {
            out = out.conjugated_on(&[j], &unitaries[j], lattice)?;
        }
        Ok(out)
    }

    /// Group average `(1/|G|) Σ_g g·op`.
    pub fn average(&self, op: &LocalOperator, lattice: &Lattice) -> Result<LocalOperator> {
        let mut sum = LocalOperator::zero();
        for g in 0..self.len() {
            sum.add_assign(&self.apply(g, op, lattice)?);
        }
        Ok(sum.scale(Complex64::new(1.0 / self.len() as f64, 0.0)))
    }

    /// Worst deviation of `op` from invariance across all elements, in the
    /// upper-bound norm.
    pub fn invariance_defect(&self, op: &LocalOperator, lattice: &Lattice) -> Result<f64> {
        let mut worst = 0.0f64;
        for g in 0..self.len() {
            let moved = self.apply(g, op, lattice)?;
            worst = worst.max(moved.sub(op).norm_upper(lattice));
        }
        Ok(worst)
    }
}

/// `exp(iθK)` for a Hermitian matrix `K`, via its eigendecomposition.
pub fn unitary_from_generator(k: &DMatrix<Complex64>, theta: f64) -> Result<DMatrix<Complex64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::Operator("generator must be square".into()));
    }
    let defect = (k - k.adjoint()).norm();
    if defect > 1e-10 {
        return Err(Error::Operator(format!(
            "generator must be Hermitian (defect {defect:e})"
        )));
    }
    let eig = k.clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|ev| {
        Complex64::new(0.0, theta * ev).exp()
    }));
    Ok(&eig.eigenvectors * phases * eig.eigenvectors.adjoint())
}

/// Average a density over a group action that preserves the total
/// Hamiltonian.  The invariance of `H` is a precondition and is checked; the
/// averaged density generates the same derivation whenever the action
/// permutes the density components' contributions.
pub fn symmetrize_density(
    h: &HamiltonianDensity,
    action: &GroupAction,
    lattice: &Lattice,
) -> Result<HamiltonianDensity> {
    let total = h.total();
    let defect = action.invariance_defect(&total, lattice)?;
    if defect > INVARIANCE_TOL {
        return Err(Error::Tolerance {
            context: "group action does not preserve the Hamiltonian".into(),
            residual: defect,
            tolerance: INVARIANCE_TOL,
        });
    }
    let mut averaged = Chain::new(0)?;
    for (tuple, op) in h.density.entries() {
        averaged.set(tuple, &action.average(op, lattice)?)?;
    }
    HamiltonianDensity::new(averaged, lattice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::text::parse_operator;
    use crate::complex::{contract_conical, random_chain};
    use crate::geometry::ConicalPartition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(text: &str, lat: &Lattice) -> LocalOperator {
        parse_operator(text, lat).unwrap()
    }

    /// Transverse-field Ising density: site `j` carries the bond to `j+1`
    /// plus its own field, all times `i`.
    fn tfim_density(lat: &Lattice, coupling: f64, field: f64) -> HamiltonianDensity {
        let n = lat.len();
        let mut h = Chain::new(0).unwrap();
        for j in 0..n {
            let mut text = format!("{}i {j}:x", -field);
            if j + 1 < n {
                text.push_str(&format!(" ; {}i {j}:z {}:z", -coupling, j + 1));
            }
            h.set(&[j], &op(&text, lat)).unwrap();
        }
        HamiltonianDensity::new(h, lat).unwrap()
    }

    /// XX-chain density `i(σ^x σ^x + σ^y σ^y)/4` per bond.
    fn xx_density(lat: &Lattice) -> HamiltonianDensity {
        let n = lat.len();
        let mut h = Chain::new(0).unwrap();
        for j in 0..n - 1 {
            let text = format!("0.25i {j}:x {}:x ; 0.25i {j}:y {}:y", j + 1, j + 1);
            h.set(&[j], &op(&text, lat)).unwrap();
        }
        HamiltonianDensity::new(h, lat).unwrap()
    }

    /// Charge density `(i/2)σ^z` per site.
    fn z_charge(lat: &Lattice) -> ChargeDensity {
        let mut q = Chain::new(0).unwrap();
        for j in 0..lat.len() {
            q.set(&[j], &op(&format!("0.5i {j}:z"), lat)).unwrap();
        }
        ChargeDensity::new(q, Some("u1-z".into())).unwrap()
    }

    #[test]
    fn commuting_density_has_zero_energy_current() {
        let lat = Lattice::chain(4).unwrap();
        let mut h = Chain::new(0).unwrap();
        for j in 0..4 {
            h.set(&[j], &op(&format!("0.5i {j}:z"), &lat)).unwrap();
        }
        let h = HamiltonianDensity::new(h, &lat).unwrap();
        assert!(energy_current(&h, &lat).unwrap().is_zero());
    }

    #[test]
    fn tfim_energy_current_matches_commutators() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim_density(&lat, 1.0, 0.7);
        let je = energy_current(&h, &lat).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                if k == j {
                    continue;
                }
                let expect = h
                    .density()
                    .get(&[k])
                    .commutator(&h.density().get(&[j]), &lat)
                    .scale(Complex64::new(-1.0, 0.0));
                assert!(
                    je.get(&[k, j]).sub(&expect).max_coeff() < 1e-13,
                    "component ({k},{j})"
                );
            }
        }
    }

    #[test]
    fn energy_conservation_residual_vanishes() {
        let lat = Lattice::chain(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let density = random_chain(0, 1.0, &lat, &mut rng).unwrap();
        let h = HamiltonianDensity::new(density, &lat).unwrap();
        let je = energy_current(&h, &lat).unwrap();
        // ∂j^E + {H,h} = 0.
        let dje = boundary(&je).unwrap();
        let hh = expect_chain(
            graded_bracket(
                &Graded::Derivation(h.derivation().clone()),
                &Graded::Chain(h.density().clone()),
                &lat,
            )
            .unwrap(),
        );
        assert!(dje.add_chain(&hh).unwrap().max_coeff() < 1e-12);
        // Closedness of the source: ∂₀{H,h} = 0.
        assert!(boundary_zero(&hh, &lat).unwrap().max_coeff() < 1e-12);
    }

    #[test]
    fn diagonal_model_has_zero_charge_current() {
        let lat = Lattice::chain(4).unwrap();
        // Pure σ^zσ^z couplings commute with the charge.
        let h = tfim_density(&lat, 1.0, 0.0);
        let q = z_charge(&lat);
        let j = charge_current(&h, &q, &lat).unwrap();
        assert!(j.is_zero());
    }

    #[test]
    fn xx_chain_charge_current_is_conserved() {
        let lat = Lattice::chain(4).unwrap();
        let h = xx_density(&lat);
        let q = z_charge(&lat);
        assert!(invariance_residual(&h, &q, &lat).unwrap() < 1e-12);
        let j = charge_current(&h, &q, &lat).unwrap();
        assert!(!j.is_zero());
        // ∂j = −{H,q}.
        let dj = boundary(&j).unwrap();
        let hq = expect_chain(
            graded_bracket(
                &Graded::Derivation(h.derivation().clone()),
                &Graded::Chain(q.density().clone()),
                &lat,
            )
            .unwrap(),
        );
        assert!(dj.add_chain(&hq).unwrap().max_coeff() < 1e-12);
        // Closedness: ∂₀{H,q} = 0.
        assert!(boundary_zero(&hq, &lat).unwrap().max_coeff() < 1e-12);
    }

    #[test]
    fn non_invariant_charge_is_rejected() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim_density(&lat, 1.0, 0.9);
        let q = z_charge(&lat);
        match charge_current(&h, &q, &lat) {
            Err(Error::Tolerance { residual, .. }) => assert!(residual > 1e-3),
            other => panic!("expected a tolerance error, got {other:?}"),
        }
    }

    #[test]
    fn disjoint_supports_give_zero_current() {
        let lat = Lattice::chain(6).unwrap();
        let mut hc = Chain::new(0).unwrap();
        hc.set(&[0], &op("1i 0:x 1:x", &lat)).unwrap();
        let h = HamiltonianDensity::new(hc, &lat).unwrap();
        let mut qc = Chain::new(0).unwrap();
        qc.set(&[4], &op("0.5i 4:z", &lat)).unwrap();
        let q = ChargeDensity::new(qc, None).unwrap();
        let j = charge_current(&h, &q, &lat).unwrap();
        assert!(j.is_zero());
    }

    #[test]
    fn cut_contraction_flips_with_orientation() {
        let lat = Lattice::chain(6).unwrap();
        let h = xx_density(&lat);
        let q = z_charge(&lat);
        let j = charge_current(&h, &q, &lat).unwrap();
        let partition = ConicalPartition::line(3.0);
        let forward = contract_conical(&j, &partition, &lat).unwrap();
        let backward = contract_conical(&j, &partition.flipped(), &lat).unwrap();
        assert!(!forward.is_zero());
        assert!(forward.add(&backward).max_coeff() < 1e-14);
    }

    #[test]
    fn u1_average_is_identity_on_diagonal_density() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim_density(&lat, 1.0, 0.0);
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ]));
        let action = GroupAction::u1_about(&lat, &k, 16).unwrap();
        let sym = symmetrize_density(&h, &action, &lat).unwrap();
        for j in 0..3 {
            let diff = sym
                .density()
                .get(&[j])
                .sub(&h.density().get(&[j]))
                .max_coeff();
            assert!(diff < 1e-12, "site {j}: {diff:e}");
        }
    }

    #[test]
    fn z2_flip_preserves_ising_density() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim_density(&lat, 1.0, 0.8);
        let flip = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let action = GroupAction::z2(&lat, flip).unwrap();
        let sym = symmetrize_density(&h, &action, &lat).unwrap();
        for j in 0..3 {
            assert!(sym.density().get(&[j]).sub(&h.density().get(&[j])).max_coeff() < 1e-12);
        }
    }

    #[test]
    fn u1_average_restores_invariance() {
        let lat = Lattice::chain(4).unwrap();
        // XX couplings (invariant) plus a small symmetric perturbation that
        // is not U(1)-invariant as a density split, assigned asymmetrically.
        let mut chain = xx_density(&lat).density().clone();
        chain
            .add(&[1], &op("0.05i 1:x 2:x ; -0.05i 1:y 2:y", &lat))
            .unwrap();
        chain
            .add(&[2], &op("-0.05i 1:x 2:x ; 0.05i 1:y 2:y", &lat))
            .unwrap();
        // The perturbations cancel in the total H, so H itself is invariant
        // while individual components are not.
        let h = HamiltonianDensity::new(chain, &lat).unwrap();
        let q = z_charge(&lat);
        assert!(invariance_residual(&h, &q, &lat).unwrap() > 1e-3);

        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ]));
        let action = GroupAction::u1_about(&lat, &k, 64).unwrap();
        let sym = symmetrize_density(&h, &action, &lat).unwrap();
        assert!(invariance_residual(&sym, &q, &lat).unwrap() < 1e-10);
        // The derivation is unchanged: averaging only moved the split.
        assert!(sym
            .derivation()
            .sub_derivation(h.derivation())
            .max_coeff()
            < 1e-12);
    }

    #[test]
    fn witness_of_identical_currents_is_zero() {
        let lat = Lattice::chain(4).unwrap();
        let h = xx_density(&lat);
        let je = energy_current(&h, &lat).unwrap();
        let w = ambiguity_witness(&je, &je, &lat).unwrap();
        assert!(w.is_zero());
    }

    #[test]
    fn witness_recovers_constructed_exact_difference() {
        let lat = Lattice::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let h = xx_density(&lat);
        let j1 = energy_current(&h, &lat).unwrap();
        let bump = random_chain(2, 1.5, &lat, &mut rng).unwrap();
        let j2 = j1.add_chain(&boundary(&bump).unwrap()).unwrap();
        let w = ambiguity_witness(&j1, &j2, &lat).unwrap();
        let recovered = boundary(&w).unwrap();
        let target = j1.sub_chain(&j2).unwrap();
        assert!(recovered.sub_chain(&target).unwrap().max_coeff() < 1e-12);
    }

    #[test]
    fn two_solutions_of_conservation_equation_validate() {
        let lat = Lattice::chain(4).unwrap();
        let h = tfim_density(&lat, 1.0, 0.6);
        let j1 = energy_current(&h, &lat).unwrap();
        // Homotopy-based solution of ∂j = −{H,h}.
        let source = expect_chain(
            graded_bracket(
                &Graded::Derivation(h.derivation().clone()),
                &Graded::Chain(h.density().clone()),
                &lat,
            )
            .unwrap(),
        )
        .scale(Complex64::new(-1.0, 0.0));
        let j2 = homotopy(&source, &lat).unwrap();
        // Both solve the equation...
        assert!(boundary(&j1).unwrap().sub_chain(&source).unwrap().max_coeff() < 1e-12);
        assert!(boundary(&j2).unwrap().sub_chain(&source).unwrap().max_coeff() < 1e-12);
        // ...and the witness certifies their difference is exact.
        let w = ambiguity_witness(&j1, &j2, &lat).unwrap();
        let recovered = boundary(&w).unwrap();
        let target = j1.sub_chain(&j2).unwrap();
        assert!(recovered.sub_chain(&target).unwrap().max_coeff() < 1e-12);
    }

    #[test]
    fn mismatched_boundaries_are_rejected() {
        let lat = Lattice::chain(4).unwrap();
        let h1 = tfim_density(&lat, 1.0, 0.3);
        let h2 = tfim_density(&lat, 0.5, 0.9);
        let j1 = energy_current(&h1, &lat).unwrap();
        let j2 = energy_current(&h2, &lat).unwrap();
        assert!(matches!(
            ambiguity_witness(&j1, &j2, &lat),
            Err(Error::Tolerance { .. })
        ));
    }
}
