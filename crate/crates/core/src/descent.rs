//! Maurer-Cartan descent over parameter manifolds.
//!
//! A smooth family of gapped Hamiltonians over a parameter manifold carries
//! a connection built from the spectral filters: at each mesh edge the
//! transport generator `K_e = I_W(i·ΔH)` moves the ground state of the tail
//! Hamiltonian to the head's.  The curvature of that connection is
//! ψ-preserving, so the ψ-preserving homotopy solves the descent equations
//! cell by cell; the resulting closed forms on the mesh have quantized
//! periods — Berry/Chern numbers over two-parameter families, Hall
//! conductance at a symmetric point, and Thouless pump charges over cycles.

use num_complex::Complex64;

use crate::algebra::LocalOperator;
use crate::complex::{
    boundary_zero, contract_conical, contract_sum, graded_bracket, Chain, Derivation, Graded,
};
use crate::currents::{unitary_from_generator, GroupAction};
use crate::error::{Error, Result};
use crate::geometry::{ConicalPartition, Lattice, SiteId};
use crate::mesh::{DiscreteForm, MeshKind, ParamMesh};
use crate::spectral::{Circuit, FilterKind, GappedBackend, GappedContext};
use crate::state::StateHomotopy;

/// Default ratio of the uniform filter width Δ′ to the minimum gap over the
/// family (the largest ratio the transport estimates allow).
pub const DESCENT_GAP_FRACTION: f64 = 0.5;
/// Residual allowed when checking that a family or a solution chain is
/// invariant under the declared symmetry.
pub const EQUIVARIANCE_TOL: f64 = 1e-9;

/// A family of gapped lattice Hamiltonians over a parameter manifold.
///
/// `density` and `context` must describe the same Hamiltonian at each
/// parameter point (`∂ density = i·H` is validated when contexts are
/// built).  `edge_transport` may supply the exact local circuit generating
/// the family along a mesh edge — `ψ(head) = V ψ(tail)` — which descent
/// then uses for exact parallel transport.
pub trait Family {
    fn lattice(&self) -> &Lattice;
    /// Hamiltonian density (ASA 0-chain with `∂h = i·H`) at a point.
    fn density(&self, point: &[f64]) -> Result<Chain>;
    /// Gapped context at a point; the backend choice is the family's.
    fn context(&self, point: &[f64]) -> Result<GappedContext>;
    /// Exact transport circuit along an edge, when the family is generated
    /// by local circuits.
    fn edge_transport(&self, tail: &[f64], head: &[f64]) -> Result<Option<Circuit>> {
        let _ = (tail, head);
        Ok(None)
    }
}

/// A family sampled on a mesh: a gapped context and ψ-preserving homotopy
/// at every cell (vertices, edge midpoints, face centers), all sharing one
/// uniform filter width Δ′, plus any exact edge-transport circuits.
pub struct FamilyContexts {
    mesh: ParamMesh,
    homotopies: Vec<Vec<StateHomotopy>>,
    edge_circuits: Vec<Option<Circuit>>,
    lattice: Lattice,
    min_gap: f64,
    delta_prime: f64,
}

impl FamilyContexts {
    /// Sample `family` on `mesh`.  `gap_fraction` sets the uniform filter
    /// width `Δ′ = gap_fraction × (minimum gap over all cells)` and must lie
    /// in `(0, 1/2]`.
    pub fn build(family: &dyn Family, mesh: ParamMesh, gap_fraction: f64) -> Result<Self> {
        if !(gap_fraction > 0.0 && gap_fraction <= 0.5) {
            return Err(Error::Descent(format!(
                "gap fraction must lie in (0, 1/2], got {gap_fraction}"
            )));
        }
        mesh.validate()?;
        let lattice = family.lattice().clone();
        // First pass: contexts everywhere, to know the minimum gap.
        let mut contexts: Vec<Vec<GappedContext>> = Vec::new();
        let mut min_gap = f64::INFINITY;
        for dim in 0..=mesh.dim() {
            let mut row = Vec::with_capacity(mesh.cells(dim));
            for idx in 0..mesh.cells(dim) {
                let ctx = family.context(mesh.cell_point(dim, idx))?;
                min_gap = min_gap.min(ctx.gap());
                row.push(ctx);
            }
            contexts.push(row);
        }
        let delta_prime = gap_fraction * min_gap;
        // Second pass: uniform Δ′ and the ψ-preserving homotopy per cell.
        let mut homotopies: Vec<Vec<StateHomotopy>> = Vec::new();
        for (dim, row) in contexts.into_iter().enumerate() {
            let mut hrow = Vec::with_capacity(row.len());
            for (idx, ctx) in row.into_iter().enumerate() {
                let density = family.density(mesh.cell_point(dim, idx))?;
                let ctx = ctx.with_delta_prime(delta_prime)?;
                hrow.push(StateHomotopy::new(ctx, &density)?);
            }
            homotopies.push(hrow);
        }
        let mut edge_circuits = Vec::with_capacity(mesh.cells(1));
        for edge in mesh.edges() {
            let tail = mesh.vertices()[edge.tail].point.clone();
            let head = mesh.vertices()[edge.head].point.clone();
            edge_circuits.push(family.edge_transport(&tail, &head)?);
        }
        Ok(FamilyContexts {
            mesh,
            homotopies,
            edge_circuits,
            lattice,
            min_gap,
            delta_prime,
        })
    }

    pub fn mesh(&self) -> &ParamMesh {
        &self.mesh
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    /// The ψ-preserving homotopy at a cell.
    pub fn homotopy(&self, dim: usize, idx: usize) -> &StateHomotopy {
        &self.homotopies[dim][idx]
    }

    /// The gapped context at a cell.
    pub fn context(&self, dim: usize, idx: usize) -> &GappedContext {
        self.homotopies[dim][idx].context()
    }

    /// Exact transport circuit along an edge, if the family provides one.
    pub fn edge_circuit(&self, edge: usize) -> Option<&Circuit> {
        self.edge_circuits[edge].as_ref()
    }
}

/// The filtered transport connection: for each mesh edge the derivation of
/// `K_e = I_W(i·(H_head − H_tail))`, filtered at the edge-midpoint context.
pub fn connection_from_family(fc: &FamilyContexts) -> Result<Vec<Derivation>> {
    let mut out = Vec::with_capacity(fc.mesh.cells(1));
    for (eidx, edge) in fc.mesh.edges().iter().enumerate() {
        let h_tail = fc.context(0, edge.tail).hamiltonian_op()?;
        let h_head = fc.context(0, edge.head).hamiltonian_op()?;
        let dh_asa = h_head.sub(&h_tail).scale(Complex64::new(0.0, 1.0));
        let k = fc.context(1, eidx).filter(&dh_asa, FilterKind::WInt)?;
        out.push(Derivation::from_operator(&k, &fc.lattice));
    }
    Ok(out)
}

/// Worst-case defect of discrete parallel transport over all edges and
/// probes: `|⟨A⟩_head − ⟨A⟩_tail − ⟨[K_e, A]⟩_mid|`, which is `O(h²)` in the
/// mesh width for smooth families.
pub fn parallel_transport_residual(
    fc: &FamilyContexts,
    g: &[Derivation],
    probes: &[LocalOperator],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (eidx, edge) in fc.mesh.edges().iter().enumerate() {
        let k = g[eidx].total();
        for a in probes {
            let head = fc.context(0, edge.head).expectation(a)?;
            let tail = fc.context(0, edge.tail).expectation(a)?;
            let step = fc.context(1, eidx).expectation(&k.commutator(a, &fc.lattice))?;
            worst = worst.max((head - tail - step).norm());
        }
    }
    Ok(worst)
}

/// Path-ordered cup product of two edge fields on a face: the signed legs
/// `ℓ_k` of the face boundary combine as `Σ_{a<b} {ℓ_a(x), ℓ_b(y)}`, the
/// discrete wedge-bracket.
fn cup_bracket(
    face: usize,
    x: &[Derivation],
    y: &[Derivation],
    fc: &FamilyContexts,
) -> Result<Derivation> {
    let legs_of = |field: &[Derivation]| -> Vec<Derivation> {
        fc.mesh.faces()[face]
            .boundary
            .iter()
            .map(|&(eidx, sign)| field[eidx].scale(Complex64::new(sign as f64, 0.0)))
            .collect()
    };
    let lx = legs_of(x);
    let ly = legs_of(y);
    let mut total = Derivation::zero();
    for a in 0..lx.len() {
        for b in (a + 1)..ly.len() {
            let br = graded_bracket(
                &Graded::Derivation(lx[a].clone()),
                &Graded::Derivation(ly[b].clone()),
                &fc.lattice,
            )?;
            match br {
                Graded::Derivation(d) => total = total.add_derivation(&d),
                Graded::Chain(_) => {
                    return Err(Error::Descent(
                        "bracket of two derivations must be a derivation".into(),
                    ))
                }
            }
        }
    }
    Ok(total)
}

/// Discrete curvature of the connection: per face
/// `F = dG + ½{G, G}` with the path-ordered cup product.
pub fn curvature(fc: &FamilyContexts, g: &[Derivation]) -> Result<Vec<Derivation>> {
    let mut out = Vec::with_capacity(fc.mesh.cells(2));
    for (fidx, face) in fc.mesh.faces().iter().enumerate() {
        let mut dg = Derivation::zero();
        for &(eidx, sign) in &face.boundary {
            dg = dg.add_derivation(&g[eidx].scale(Complex64::new(sign as f64, 0.0)));
        }
        let cup = cup_bracket(fidx, g, g, fc)?.scale(Complex64::new(0.5, 0.0));
        out.push(dg.add_derivation(&cup));
    }
    Ok(out)
}

/// Residual maxima accumulated over the cellwise solves of a descent run.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveReport {
    /// Worst boundary defect of the inputs fed to the homotopy.
    pub cycle_residual: f64,
    /// Worst defect of the solved component equations `∂x = rhs`.
    pub equation_residual: f64,
    /// Worst excitation residual among inputs and outputs.
    pub excitation_residual: f64,
}

impl SolveReport {
    fn absorb_cycle(&mut self, boundary: f64, excitation: f64) {
        self.cycle_residual = self.cycle_residual.max(boundary);
        self.excitation_residual = self.excitation_residual.max(excitation);
    }

    fn absorb_equation(&mut self, residual: f64) {
        self.equation_residual = self.equation_residual.max(residual);
    }
}

/// The degree-zero descent solution: one 0-chain per face, solving
/// `∂ g⁰(face) = −F(face)` inside the ψ-preserving subcomplex.
pub struct McSolution {
    pub g0: Vec<Chain>,
    pub report: SolveReport,
}

/// Solve the first Maurer-Cartan descent equation cell by cell.  `tol` is
/// the residual budget for the ψ-homotopy pre/post-checks; discretized
/// curvatures carry an `O(h³)` excitation defect, so the budget scales with
/// the mesh width.
pub fn mc_descend(fc: &FamilyContexts, f: &[Derivation], tol: f64) -> Result<McSolution> {
    if f.len() != fc.mesh.cells(2) {
        return Err(Error::Descent(format!(
            "curvature field has {} entries for {} faces",
            f.len(),
            fc.mesh.cells(2)
        )));
    }
    let mut g0 = Vec::with_capacity(f.len());
    let mut report = SolveReport::default();
    for (fidx, f_face) in f.iter().enumerate() {
        let sh = fc.homotopy(2, fidx);
        let rhs = Graded::Derivation(f_face.scale(Complex64::new(-1.0, 0.0)));
        let (bres, eres) = sh.cycle_check(&rhs)?;
        report.absorb_cycle(bres, eres);
        let x = sh.psi_homotopy_with_tolerance(&rhs, tol)?;
        let eq = boundary_zero(&x, &fc.lattice)?
            .sub_derivation(&f_face.scale(Complex64::new(-1.0, 0.0)))
            .max_coeff();
        report.absorb_equation(eq);
        report.excitation_residual = report
            .excitation_residual
            .max(sh.graded_excitation(&Graded::Chain(x.clone()))?);
        g0.push(x);
    }
    Ok(McSolution { g0, report })
}

/// Transport unitary along an edge: the family's exact circuit when
/// present, otherwise `exp(−K_e)` from the filtered connection.
fn edge_transport_matrix(
    fc: &FamilyContexts,
    g: &[Derivation],
    eidx: usize,
) -> Result<nalgebra::DMatrix<Complex64>> {
    if let Some(circuit) = fc.edge_circuit(eidx) {
        return circuit.unitary_dense(&fc.lattice, crate::algebra::DENSE_CAP_DEFAULT);
    }
    let k = fc.context(1, eidx).dense_matrix(&g[eidx].total())?;
    // K is anti-self-adjoint; exp(−K) = exp(−i·(−iK)) with −iK Hermitian.
    let herm = k.map(|z| z * Complex64::new(0.0, -1.0));
    unitary_from_generator(&herm, -1.0)
}

/// The Berry 2-form by plaquette-local holonomy: per oriented face the
/// accumulated phase of the transported ground state,
/// `f(face) = i·Arg ∏_legs ⟨ψ_to| V_leg |ψ_from⟩`.  Summed over a closed
/// surface the phases telescope, so the integral is exactly quantized in
/// `2πi·Z`.
pub fn berry_form(fc: &FamilyContexts, g: &[Derivation]) -> Result<DiscreteForm> {
    let mut psi = Vec::with_capacity(fc.mesh.cells(0));
    for v in 0..fc.mesh.cells(0) {
        psi.push(fc.context(0, v).ground_state_dense()?);
    }
    let mut link = Vec::with_capacity(fc.mesh.cells(1));
    for (eidx, edge) in fc.mesh.edges().iter().enumerate() {
        let v = edge_transport_matrix(fc, g, eidx)?;
        let u = (psi[edge.head].adjoint() * &v * &psi[edge.tail])[(0, 0)];
        if u.norm() < 1e-6 {
            return Err(Error::Descent(format!(
                "holonomy link on edge {eidx} is ill-conditioned (|u| = {:.2e}); \
                 refine the mesh",
                u.norm()
            )));
        }
        link.push(u);
    }
    let mut form = DiscreteForm::zero(&fc.mesh, 2);
    for (fidx, face) in fc.mesh.faces().iter().enumerate() {
        let mut z = Complex64::new(1.0, 0.0);
        for &(eidx, sign) in &face.boundary {
            z *= if sign >= 0 { link[eidx] } else { link[eidx].conj() };
        }
        form.values[fidx] = Complex64::new(0.0, z.arg());
    }
    Ok(form)
}

/// The Berry 2-form from a descent solution: per face the ground-state
/// expectation of the solved 0-chain's total, `f(face) = ⟨Σ_j g⁰_j⟩_ψ`.
/// Agrees with the holonomy form to discretization order; kept as the
/// cross-check between the two evaluations.
pub fn berry_form_from_solution(fc: &FamilyContexts, sol: &McSolution) -> Result<DiscreteForm> {
    let mut form = DiscreteForm::zero(&fc.mesh, 2);
    for (fidx, x) in sol.g0.iter().enumerate() {
        let total = boundary_zero(x, &fc.lattice)?.total();
        form.values[fidx] = fc.context(2, fidx).expectation(&total)?;
    }
    Ok(form)
}

// -- equivariant descent -----------------------------------------------------

/// The symmetry structure a family may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryGroup {
    /// No symmetry: equivariant descent reduces to plain descent.
    Trivial,
    /// On-site U(1) with the given quadrature order for group averaging
    /// (exact once the order exceeds the largest charge harmonic).
    U1 { quadrature: usize },
}

/// Symmetry data for equivariant descent: the group and, for U(1), the
/// conserved charge density (an ASA 0-chain of on-site generators).
#[derive(Debug, Clone)]
pub struct EquivariantData {
    group: SymmetryGroup,
    charge: Option<Chain>,
}

impl EquivariantData {
    pub fn trivial() -> Self {
        EquivariantData {
            group: SymmetryGroup::Trivial,
            charge: None,
        }
    }

    /// U(1) with conserved charge density `q` (degree-0 ASA chain).
    pub fn u1(charge: Chain, quadrature: usize) -> Result<Self> {
        if charge.degree() != 0 {
            return Err(Error::Descent("charge density must be a 0-chain".into()));
        }
        if charge.asa_defect() > 1e-12 {
            return Err(Error::Descent(
                "charge density must be anti-self-adjoint".into(),
            ));
        }
        if quadrature < 2 {
            return Err(Error::Descent(
                "U(1) quadrature needs at least 2 points".into(),
            ));
        }
        Ok(EquivariantData {
            group: SymmetryGroup::U1 { quadrature },
            charge: Some(charge),
        })
    }

    pub fn group(&self) -> SymmetryGroup {
        self.group
    }

    pub fn charge(&self) -> Option<&Chain> {
        self.charge.as_ref()
    }

    /// The charge derivation `Q = ∂q`.
    pub fn charge_derivation(&self, lattice: &Lattice) -> Result<Derivation> {
        match &self.charge {
            Some(q) => boundary_zero(q, lattice),
            None => Ok(Derivation::zero()),
        }
    }

    /// The averaging action: for U(1), on-site rotations `exp(iθ q_j/i)`
    /// over the quadrature angles.  Requires a uniform single-site charge.
    pub fn action(&self, lattice: &Lattice) -> Result<Option<GroupAction>> {
        let SymmetryGroup::U1 { quadrature } = self.group else {
            return Ok(None);
        };
        let q = self
            .charge
            .as_ref()
            .ok_or_else(|| Error::Descent("U(1) data needs a charge density".into()))?;
        let mut generator: Option<nalgebra::DMatrix<Complex64>> = None;
        let mut seen = vec![false; lattice.len()];
        for (tuple, op) in q.entries() {
            if tuple.len() != 1 {
                return Err(Error::Descent(
                    "charge density entries must be on-site".into(),
                ));
            }
            let j = tuple[0];
            let support = op.support();
            if !(support.is_empty() || (support.len() == 1 && support.contains(&j))) {
                return Err(Error::Descent(
                    "charge density entries must act on their own site".into(),
                ));
            }
            let dense =
                crate::algebra::DenseRealization::assemble(op, lattice, &[j], lattice.onsite_dim(j))?;
            // Hermitian generator of the rotation: q_j / i.
            let herm = dense.matrix().map(|z| z * Complex64::new(0.0, -1.0));
            match &generator {
                None => generator = Some(herm),
                Some(g0) => {
                    if (g0 - &herm).norm() > 1e-12 {
                        return Err(Error::Descent(
                            "averaging needs a uniform on-site charge".into(),
                        ));
                    }
                }
            }
            seen[j] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Descent(
                "charge density must cover every site".into(),
            ));
        }
        let generator =
            generator.ok_or_else(|| Error::Descent("charge density is empty".into()))?;
        Ok(Some(GroupAction::u1_about(lattice, &generator, quadrature)?))
    }

    /// Worst commutator defect `‖[Q, H(cell)]‖` over all vertex cells.
    pub fn invariance_residual(&self, fc: &FamilyContexts) -> Result<f64> {
        let q_total = self.charge_derivation(&fc.lattice)?.total();
        let mut worst = 0.0f64;
        for v in 0..fc.mesh.cells(0) {
            let h = fc.context(0, v).hamiltonian_op()?;
            worst = worst.max(q_total.commutator(&h, &fc.lattice).max_coeff());
        }
        Ok(worst)
    }
}

/// Average every entry of a chain over a group action.
fn average_chain(chain: &Chain, action: &GroupAction, lattice: &Lattice) -> Result<Chain> {
    let mut out = Chain::new(chain.degree())?;
    for (tuple, op) in chain.entries() {
        out.set(tuple, &action.average(op, lattice)?)?;
    }
    Ok(out)
}

/// An equivariant descent solution, shaped by the group and the mesh.
pub enum EquivariantSolution {
    /// Trivial group: the plain Maurer-Cartan solution, bit for bit.
    Plain(McSolution),
    /// U(1) at a point: `∂m⁰ = −Q` and `∂m² = −½{m⁰, m⁰}`.
    Point { m0: Chain, m2: Chain, report: SolveReport },
    /// U(1) over a 1-cycle: `∂t⁰(v) = −Q` per vertex and
    /// `∂t¹(e) = −D_e t⁰` per edge, with exact or filtered transport.
    Cycle {
        t0: Vec<Chain>,
        t1: Vec<Chain>,
        report: SolveReport,
    },
}

/// Solve the equivariant descent equations for the family.  The trivial
/// group reduces to [`mc_descend`] exactly; U(1) supports point meshes
/// (Hall) and 1-cycles (pumps).
pub fn equivariant_descend(
    fc: &FamilyContexts,
    g: &[Derivation],
    eq: &EquivariantData,
    tol: f64,
) -> Result<EquivariantSolution> {
    match eq.group {
        SymmetryGroup::Trivial => {
            let f = curvature(fc, g)?;
            Ok(EquivariantSolution::Plain(mc_descend(fc, &f, tol)?))
        }
        SymmetryGroup::U1 { .. } => {
            let inv = eq.invariance_residual(fc)?;
            if inv > EQUIVARIANCE_TOL {
                return Err(Error::Tolerance {
                    context: "family is not invariant under the declared U(1)".into(),
                    residual: inv,
                    tolerance: EQUIVARIANCE_TOL,
                });
            }
            match fc.mesh.kind() {
                MeshKind::Point => equivariant_point(fc, eq, tol),
                MeshKind::Circle(_) | MeshKind::Interval(_) => {
                    equivariant_cycle(fc, g, eq, tol)
                }
                _ => Err(Error::Descent(
                    "U(1)-equivariant descent over 2-parameter meshes is not supported".into(),
                )),
            }
        }
    }
}

/// Solve `∂x = rhs` with the cell's ψ-homotopy; returns the solution and
/// folds the residuals into `report`.
fn solve_cell(
    sh: &StateHomotopy,
    rhs: &Graded,
    tol: f64,
    lattice: &Lattice,
    report: &mut SolveReport,
) -> Result<Chain> {
    let (bres, eres) = sh.cycle_check(rhs)?;
    report.absorb_cycle(bres, eres);
    let x = sh.psi_homotopy_with_tolerance(rhs, tol)?;
    let eq = Graded::Chain(x.clone())
        .boundary(lattice)?
        .sub_graded(rhs)?
        .max_coeff();
    report.absorb_equation(eq);
    report.excitation_residual = report
        .excitation_residual
        .max(sh.graded_excitation(&Graded::Chain(x.clone()))?);
    Ok(x)
}

fn equivariant_point(
    fc: &FamilyContexts,
    eq: &EquivariantData,
    tol: f64,
) -> Result<EquivariantSolution> {
    let lattice = &fc.lattice;
    let action = eq
        .action(lattice)?
        .ok_or_else(|| Error::Descent("U(1) averaging action unavailable".into()))?;
    let sh = fc.homotopy(0, 0);
    let mut report = SolveReport::default();
    // Degree zero: ∂m⁰ = −Q.
    let q = eq.charge_derivation(lattice)?;
    let rhs0 = Graded::Derivation(q.scale(Complex64::new(-1.0, 0.0)));
    let m0 = solve_cell(sh, &rhs0, tol, lattice, &mut report)?;
    let m0 = average_chain(&m0, &action, lattice)?;
    // Degree two: ∂m² = −½{m⁰, m⁰}.
    let half = graded_bracket(
        &Graded::Chain(m0.clone()),
        &Graded::Chain(m0.clone()),
        lattice,
    )?
    .scale(Complex64::new(-0.5, 0.0));
    let m2 = solve_cell(sh, &half, tol, lattice, &mut report)?;
    let m2 = average_chain(&m2, &action, lattice)?;
    Ok(EquivariantSolution::Point { m0, m2, report })
}

/// The covariant difference of the degree-zero solution across an edge.
/// With an exact transport circuit `V` this is `Ad_V†(t⁰_head) − t⁰_tail`,
/// which is exactly a ψ(tail)-preserving cycle; otherwise the filtered
/// first-order form `t⁰_head − t⁰_tail + {G_e, (t⁰_head + t⁰_tail)/2}`.
fn covariant_difference(
    fc: &FamilyContexts,
    g: &[Derivation],
    eidx: usize,
    t0_tail: &Chain,
    t0_head: &Chain,
) -> Result<Chain> {
    let lattice = &fc.lattice;
    if let Some(circuit) = fc.edge_circuit(eidx) {
        let mut pulled = Chain::new(t0_head.degree())?;
        for (tuple, op) in t0_head.entries() {
            pulled.set(tuple, &circuit.conjugate_adjoint(op, lattice)?)?;
        }
        return pulled.sub_chain(t0_tail);
    }
    let mid = t0_tail.add_chain(t0_head)?.scale(Complex64::new(0.5, 0.0));
    let diff = t0_head.sub_chain(t0_tail)?;
    let br = graded_bracket(
        &Graded::Derivation(g[eidx].clone()),
        &Graded::Chain(mid),
        lattice,
    )?;
    match br {
        Graded::Chain(c) => diff.add_chain(&c),
        Graded::Derivation(_) => Err(Error::Descent(
            "bracket of a derivation with a 0-chain must be a 0-chain".into(),
        )),
    }
}

fn equivariant_cycle(
    fc: &FamilyContexts,
    g: &[Derivation],
    eq: &EquivariantData,
    tol: f64,
) -> Result<EquivariantSolution> {
    let lattice = &fc.lattice;
    let action = eq
        .action(lattice)?
        .ok_or_else(|| Error::Descent("U(1) averaging action unavailable".into()))?;
    let q = eq.charge_derivation(lattice)?;
    let mut report = SolveReport::default();
    // Degree zero at every vertex: ∂t⁰ = −Q.
    let rhs0 = Graded::Derivation(q.scale(Complex64::new(-1.0, 0.0)));
    let mut t0 = Vec::with_capacity(fc.mesh.cells(0));
    for v in 0..fc.mesh.cells(0) {
        let x = solve_cell(fc.homotopy(0, v), &rhs0, tol, lattice, &mut report)?;
        t0.push(average_chain(&x, &action, lattice)?);
    }
    // Degree one on every edge: ∂t¹(e) = −D_e t⁰, solved at the tail
    // context where the covariant difference is exactly ψ-preserving.
    let mut t1 = Vec::with_capacity(fc.mesh.cells(1));
    for (eidx, edge) in fc.mesh.edges().iter().enumerate() {
        let dt = covariant_difference(fc, g, eidx, &t0[edge.tail], &t0[edge.head])?;
        let rhs = Graded::Chain(dt.scale(Complex64::new(-1.0, 0.0)));
        let x = solve_cell(fc.homotopy(0, edge.tail), &rhs, tol, lattice, &mut report)?;
        t1.push(average_chain(&x, &action, lattice)?);
    }
    Ok(EquivariantSolution::Cycle { t0, t1, report })
}

// -- invariants --------------------------------------------------------------

/// A Hall conductance evaluation with its residual ledger.
#[derive(Debug, Clone, Copy)]
pub struct HallReport {
    /// `σ⁽²⁾ = 4πi ⟨m²_{A₀A₁A₂}⟩_ψ` (real by construction).
    pub sigma: f64,
    /// Imaginary part left over in the contraction (should be float dust).
    pub imag_defect: f64,
    /// Change of σ under a shifted partition apex.
    pub partition_residual: f64,
    pub report: SolveReport,
}

/// Hall conductance of a U(1)-invariant gapped model at a point: descend to
/// `m²` and contract with a three-sector conical partition.
pub fn hall_conductance(
    fc: &FamilyContexts,
    eq: &EquivariantData,
    partition: &ConicalPartition,
    tol: f64,
) -> Result<HallReport> {
    if fc.mesh.kind() != MeshKind::Point {
        return Err(Error::Descent(
            "Hall conductance is evaluated on a point mesh".into(),
        ));
    }
    let sol = equivariant_descend(fc, &[], eq, tol)?;
    let EquivariantSolution::Point { m2, report, .. } = sol else {
        return Err(Error::Descent("expected a point solution".into()));
    };
    let ctx = fc.context(0, 0);
    let sigma_of = |p: &ConicalPartition| -> Result<Complex64> {
        let contracted = contract_conical(&m2, p, &fc.lattice)?;
        let expect = ctx.expectation(&contracted)?;
        Ok(Complex64::new(0.0, 4.0 * std::f64::consts::PI) * expect)
    };
    let value = sigma_of(partition)?;
    // Stability probe: nudge the apex by a quarter lattice spacing.
    let shift = 0.25 * fc.lattice.min_spacing();
    let apex = partition.apex();
    let moved = partition.with_apex(vec![apex[0] + shift, apex[1] + 0.5 * shift])?;
    let value_moved = sigma_of(&moved)?;
    Ok(HallReport {
        sigma: value.re,
        imag_defect: value.im.abs(),
        partition_residual: (value - value_moved).norm(),
        report,
    })
}

/// A pump charge evaluation with its residual ledger.
#[derive(Debug, Clone)]
pub struct PumpReport {
    /// Charge transported through the cut per cycle.
    pub charge: f64,
    /// Real part left over in the windowed contraction (should be dust).
    pub real_defect: f64,
    /// Change of the charge under a shifted cut apex.
    pub partition_residual: f64,
    /// Per-edge contribution to the charge, in mesh edge order (the
    /// transported-charge 1-form sampled along the cycle).
    pub edge_values: Vec<f64>,
    pub report: SolveReport,
}

/// Sites of a 1d lattice within `window` of `apex` on the given side.
fn windowed_region(
    lattice: &Lattice,
    apex: f64,
    window: f64,
    right: bool,
) -> std::collections::BTreeSet<SiteId> {
    lattice
        .sites()
        .filter(|&j| {
            let x = lattice.position(j)[0];
            // Strictly inside: a site exactly at the window edge would
            // admit pairs whose shorter path runs around the far side of a
            // ring, polluting the cut current with wrap-bond flow.
            let inside = (x - apex).abs() < window;
            inside && ((right && x > apex) || (!right && x < apex))
        })
        .collect()
}

/// Thouless pump charge of a U(1)-invariant family over a 1-cycle: descend
/// to `t¹` and sum its windowed contraction across the cut at `apex`.
///
/// The windowed contraction keeps only chain entries with one site on each
/// side of the cut and both within `window` of it; on a ring this selects
/// the flow through the chosen cut rather than the wrap-around bond.  The
/// orientation convention: positive charge means net flow in the positive
/// lattice direction through the cut over one forward cycle.
pub fn thouless_charge(
    fc: &FamilyContexts,
    g: &[Derivation],
    eq: &EquivariantData,
    apex: f64,
    window: f64,
    tol: f64,
) -> Result<PumpReport> {
    if fc.lattice.dim() != 1 {
        return Err(Error::Descent("pump families live on 1d lattices".into()));
    }
    if !matches!(fc.mesh.kind(), MeshKind::Circle(_)) {
        return Err(Error::Descent(
            "pump charge is evaluated over a circle mesh".into(),
        ));
    }
    let sol = equivariant_descend(fc, g, eq, tol)?;
    let EquivariantSolution::Cycle { t1, report, .. } = sol else {
        return Err(Error::Descent("expected a cycle solution".into()));
    };
    let charge_of = |apex: f64| -> Result<(Complex64, Vec<f64>)> {
        let left = windowed_region(&fc.lattice, apex, window, false);
        let right = windowed_region(&fc.lattice, apex, window, true);
        if left.is_empty() || right.is_empty() {
            return Err(Error::Descent(format!(
                "cut window around {apex} leaves an empty side"
            )));
        }
        let regions = [left, right];
        let mut total = Complex64::new(0.0, 0.0);
        let mut per_edge = Vec::with_capacity(fc.mesh.edges().len());
        for (eidx, edge) in fc.mesh.edges().iter().enumerate() {
            let contracted = contract_sum(&t1[eidx], &regions)?;
            let v = fc.context(0, edge.tail).expectation(&contracted)?;
            per_edge.push(v.im);
            total += v;
        }
        Ok((total, per_edge))
    };
    let (value, edge_values) = charge_of(apex)?;
    let (value_moved, _) = charge_of(apex + fc.lattice.min_spacing())?;
    // The contraction is ASA-valued, so the physical charge is its
    // imaginary part; the orientation is fixed by the (left, right) region
    // order against charge-transport bookkeeping.
    Ok(PumpReport {
        charge: value.im,
        real_defect: value.re.abs(),
        partition_residual: (value - value_moved).norm(),
        edge_values,
        report,
    })
}
