//! Integration tests for the descent engine: parametrized families, the
//! spectral connection, Berry curvature, and the equivariant invariants,
//! checked against first-principles oracles frozen in `support`.

mod support;

use nalgebra::DMatrix;
use noether_core::complex::Chain;
use noether_core::descent::{
    berry_form, berry_form_from_solution, connection_from_family, curvature, equivariant_descend,
    mc_descend, parallel_transport_residual, thouless_charge, hall_conductance, EquivariantData,
    EquivariantSolution, Family, FamilyContexts,
};
use noether_core::error::Result;
use noether_core::families::{
    grid_partition, DressedGridU1, ProductGridU1, SpinHalfSphere, TfimInterval, TranslationPump,
    PUMP_APEX, PUMP_WINDOW,
};
use noether_core::geometry::Lattice;
use noether_core::mesh::ParamMesh;
use noether_core::spectral::{
    default_probe_basis, Circuit, FactorizedContext, Gate, GappedBackend, GappedContext,
    SpectralContext,
};
use num_complex::Complex64;
use support::{fh_total, pump_bookkeeping_charge, spin_up_state, SPHERE_FH_TOTAL};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

// -- oracle freezes ----------------------------------------------------------

#[test]
fn oracle_fh_total_is_frozen_minus_two_pi() {
    // The discrete Fukui–Hatsugai total over a closed surface is exactly
    // quantized in 2π, so the closed-form value is reached to rounding.
    let mesh = ParamMesh::sphere2(20, 40).unwrap();
    let total = fh_total(&mesh, spin_up_state);
    assert!(
        (total - SPHERE_FH_TOTAL).abs() < 1e-9,
        "fh total {total}, frozen {SPHERE_FH_TOTAL}"
    );
}

#[test]
fn oracle_pump_bookkeeping_is_frozen_minus_reps() {
    // Telescoping makes the bookkeeping sum independent of the micro-step
    // count; each forward cycle moves one unit of down-spin charge through
    // the cut.
    let one = pump_bookkeeping_charge(1, 16);
    let two = pump_bookkeeping_charge(2, 8);
    assert!((one + 1.0).abs() < 1e-12, "one cycle pumped {one}");
    assert!((two + 2.0).abs() < 1e-12, "two cycles pumped {two}");
}

// -- d = 0: sphere Chern number ---------------------------------------------

#[test]
fn sphere_chern_matches_fh_oracle() {
    let family = SpinHalfSphere::new().unwrap();
    let mesh = ParamMesh::sphere2(20, 40).unwrap();
    let fc = FamilyContexts::build(&family, mesh.clone(), 0.5).unwrap();
    let g = connection_from_family(&fc).unwrap();

    let form = berry_form(&fc, &g).unwrap();
    let total = form.integrate();
    // Quantized Chern integral: −2πi · 1 in this orientation.
    let winding = (total / Complex64::new(0.0, TWO_PI)).re;
    assert!(
        (winding + 1.0).abs() < 1e-3,
        "winding {winding}, total {total}"
    );
    // Exact agreement with the independent Fukui–Hatsugai oracle: both
    // totals are quantized, so they match to rounding.
    let oracle = fh_total(&mesh, spin_up_state);
    let diff = (total - Complex64::new(0.0, oracle)).norm();
    assert!(diff < 1e-10, "holonomy total {total} vs oracle {oracle}");

    // Cross-check through the Maurer–Cartan solution: the expectation of
    // the solved degree-0 chains reproduces the curvature form up to
    // discretization error.  The discrete curvature excites the ground
    // state at O(h²) (≈ 4e-3 at this resolution), so the solve tolerance
    // budgets for it; the inversion itself is then essentially exact.
    let f = curvature(&fc, &g).unwrap();
    let sol = mc_descend(&fc, &f, 0.02).unwrap();
    assert!(
        sol.report.equation_residual < 1e-12,
        "∂-inversion residual {}",
        sol.report.equation_residual
    );
    let dec = berry_form_from_solution(&fc, &sol).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in form.values.iter().zip(&dec.values) {
        worst = worst.max((a - b).norm());
    }
    assert!(worst < 5e-4, "per-face holonomy vs solution gap {worst}");
    let dec_total = dec.integrate();
    assert!(
        (dec_total - total).norm() < 0.1,
        "solution total {dec_total} vs holonomy {total}"
    );
}

// -- d = 1: translation pump -------------------------------------------------

#[test]
fn pump_charge_matches_bookkeeping_oracle() {
    let oracle = pump_bookkeeping_charge(1, 16);
    let pump = TranslationPump::new(1).unwrap();
    let fc = FamilyContexts::build(&pump, ParamMesh::circle(64).unwrap(), 0.5).unwrap();
    let g = connection_from_family(&fc).unwrap();
    let eq = EquivariantData::u1(pump.charge().unwrap(), 24).unwrap();
    let report = thouless_charge(&fc, &g, &eq, PUMP_APEX, PUMP_WINDOW, 1e-7).unwrap();
    assert!(
        (report.charge - oracle).abs() < 1e-6,
        "pumped {} vs oracle {oracle}",
        report.charge
    );
    assert!(report.real_defect < 1e-9, "real defect {}", report.real_defect);
    assert!(
        report.partition_residual < 1e-6,
        "cut dependence {}",
        report.partition_residual
    );
}

#[test]
fn pump_charge_doubles_with_doubled_period() {
    let pump2 = TranslationPump::new(2).unwrap();
    let fc = FamilyContexts::build(&pump2, ParamMesh::circle(64).unwrap(), 0.5).unwrap();
    let g = connection_from_family(&fc).unwrap();
    let eq = EquivariantData::u1(pump2.charge().unwrap(), 24).unwrap();
    let report = thouless_charge(&fc, &g, &eq, PUMP_APEX, PUMP_WINDOW, 1e-7).unwrap();
    let oracle = pump_bookkeeping_charge(2, 8);
    assert!(
        (report.charge - oracle).abs() < 1e-6,
        "pumped {} vs oracle {oracle}",
        report.charge
    );
}

// -- filter-gauge freedom and transport convergence --------------------------

/// A two-site family engineered so the filter width is visible: the static
/// part has spectrum `{0, 1, 1.35, 3}` (gap 1) and the swept part couples
/// the excited pair split by `0.35`, which lies inside one filter window
/// (`Δ′ = 0.5`) but outside the other (`Δ′ = 0.25`).
struct WindowPair {
    lattice: Lattice,
}

impl Family for WindowPair {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        let s = point[0];
        let mut h = Chain::new(0)?;
        h.set(
            &[0],
            &noether_core::algebra::text::parse_operator(
                &format!("-0.8375i 0:z ; {s}i 0:x"),
                &self.lattice,
            )?,
        )?;
        h.set(
            &[1],
            &noether_core::algebra::text::parse_operator(
                &format!(
                    "-0.6625i 1:z ; 0.1625i 0:z 1:z ; {s}i 1:x ; {}i 0:x 1:x",
                    0.3 * s
                ),
                &self.lattice,
            )?,
        )?;
        Ok(h)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        let h = noether_core::complex::boundary_zero(&self.density(point)?, &self.lattice)?
            .total()
            .scale(Complex64::new(0.0, -1.0));
        Ok(SpectralContext::diagonalize(&h, &self.lattice)?.into())
    }
}

#[test]
fn connection_gauge_change_does_not_excite() {
    // Two Δ′ choices give visibly different connections that agree on the
    // ground state: their difference lives entirely on excited matrix
    // elements, so it does not excite ψ even though it is far from zero.
    let fam = WindowPair {
        lattice: Lattice::chain(2).unwrap(),
    };
    let mesh = ParamMesh::interval(4).unwrap();
    let fc1 = FamilyContexts::build(&fam, mesh.clone(), 0.5).unwrap();
    let fc2 = FamilyContexts::build(&fam, mesh, 0.25).unwrap();
    let g1 = connection_from_family(&fc1).unwrap();
    let g2 = connection_from_family(&fc2).unwrap();
    let probes = default_probe_basis(fam.lattice(), 2.0);
    let mut largest = 0.0f64;
    for e in 0..g1.len() {
        let diff = g1[e].total().sub(&g2[e].total());
        largest = largest.max(diff.max_coeff());
        let excite = fc1
            .context(1, e)
            .does_not_excite(&diff, &probes)
            .unwrap();
        assert!(excite < 1e-9, "edge {e} gauge change excites: {excite}");
    }
    assert!(largest > 1e-2, "gauge change everywhere trivial: {largest:e}");
}

#[test]
fn transport_residual_shrinks_quadratically() {
    let fam = TfimInterval::new(6, 1.5, 2.5).unwrap();
    let probes = default_probe_basis(fam.lattice(), 2.0);
    let mut residuals = Vec::new();
    for res in [4usize, 8] {
        let fc = FamilyContexts::build(&fam, ParamMesh::interval(res).unwrap(), 0.5).unwrap();
        let g = connection_from_family(&fc).unwrap();
        residuals.push(parallel_transport_residual(&fc, &g, &probes).unwrap());
    }
    let ratio = residuals[0] / residuals[1];
    assert!(
        ratio > 2.5,
        "transport residuals {residuals:?} shrink with ratio {ratio}, expected ≈ 4"
    );
}

// -- exact circuit family: flat Berry form -----------------------------------

/// A two-parameter circuit family on a 3-site chain with a constant ground
/// state: `U(s₁, s₂) = B(s₂)·A(s₁)` with `A = exp(2πi s₁ P₀₁)`,
/// `B = exp(2πi s₂ P₁₂)` for singlet projectors `P`.  The projectors have
/// spectrum {0, 1}, so the family is exactly periodic, and the product
/// ground state `|↑↑↑⟩` has no singlet component, so every transported
/// link is exactly 1 and the Berry form vanishes identically.
struct SingletTorus {
    lattice: Lattice,
    fields: [f64; 3],
}

fn singlet_projector() -> DMatrix<Complex64> {
    let mut p = DMatrix::zeros(4, 4);
    p[(1, 1)] = Complex64::new(0.5, 0.0);
    p[(1, 2)] = Complex64::new(-0.5, 0.0);
    p[(2, 1)] = Complex64::new(-0.5, 0.0);
    p[(2, 2)] = Complex64::new(0.5, 0.0);
    p
}

impl SingletTorus {
    fn new() -> Result<Self> {
        Ok(SingletTorus {
            lattice: Lattice::chain(3)?,
            fields: [0.7, 1.1, 1.7],
        })
    }

    fn gate_a(&self, angle: f64) -> Result<Gate> {
        Gate::from_generator(vec![0, 1], &singlet_projector(), TWO_PI * angle, &self.lattice)
    }

    fn gate_b(&self, angle: f64) -> Result<Gate> {
        Gate::from_generator(vec![1, 2], &singlet_projector(), TWO_PI * angle, &self.lattice)
    }

    fn circuit_at(&self, point: &[f64]) -> Result<Circuit> {
        let mut circuit = Circuit::new();
        circuit.push_layer(vec![self.gate_a(point[0])?])?;
        circuit.push_layer(vec![self.gate_b(point[1])?])?;
        Ok(circuit)
    }

    fn site_terms(&self) -> Vec<DMatrix<Complex64>> {
        self.fields
            .iter()
            .map(|&a| {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    Complex64::new(-0.5 * a, 0.0),
                    Complex64::new(0.5 * a, 0.0),
                ]))
            })
            .collect()
    }
}

impl Family for SingletTorus {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        let circuit = self.circuit_at(point)?;
        let mut h = Chain::new(0)?;
        for (j, &a) in self.fields.iter().enumerate() {
            let base = noether_core::algebra::text::parse_operator(
                &format!("{}i {j}:z", -0.5 * a),
                &self.lattice,
            )?;
            h.set(&[j], &circuit.conjugate(&base, &self.lattice)?)?;
        }
        Ok(h)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        Ok(FactorizedContext::new(
            &self.lattice,
            self.site_terms(),
            Some(self.circuit_at(point)?),
        )?
        .into())
    }

    fn edge_transport(&self, tail: &[f64], head: &[f64]) -> Result<Option<Circuit>> {
        let d1 = (head[0] - tail[0]).rem_euclid(1.0);
        let d2 = (head[1] - tail[1]).rem_euclid(1.0);
        let mut circuit = Circuit::new();
        if d2.min(1.0 - d2) < 1e-12 {
            // An s₁ edge: U(head)U(tail)† = B(s₂)·A(δ)·B(s₂)†.
            circuit.push_layer(vec![self.gate_b(-tail[1])?])?;
            circuit.push_layer(vec![self.gate_a(d1)?])?;
            circuit.push_layer(vec![self.gate_b(tail[1])?])?;
        } else {
            // An s₂ edge: U(head)U(tail)† = B(δ).
            circuit.push_layer(vec![self.gate_b(d2)?])?;
        }
        Ok(Some(circuit))
    }
}

#[test]
fn flat_circuit_family_has_exact_transport_and_zero_berry_form() {
    let family = SingletTorus::new().unwrap();
    let fc = FamilyContexts::build(&family, ParamMesh::torus2(6, 6).unwrap(), 0.5).unwrap();
    // The provided circuits transport ground states exactly.
    for (eidx, edge) in fc.mesh().edges().iter().enumerate() {
        let v = fc
            .edge_circuit(eidx)
            .expect("family provides circuits")
            .unitary_dense(family.lattice(), 64)
            .unwrap();
        let psi_tail = fc.context(0, edge.tail).ground_state_dense().unwrap();
        let psi_head = fc.context(0, edge.head).ground_state_dense().unwrap();
        let moved = &v * &psi_tail;
        assert!(
            (&moved - &psi_head).norm() < 1e-12,
            "edge {eidx} transport defect {}",
            (&moved - &psi_head).norm()
        );
    }
    let g = connection_from_family(&fc).unwrap();
    let form = berry_form(&fc, &g).unwrap();
    for (fidx, v) in form.values.iter().enumerate() {
        assert!(v.norm() < 1e-12, "face {fidx} carries curvature {v}");
    }
}

// -- d = 2: Hall conductance -------------------------------------------------

#[test]
fn hall_conductance_vanishes_on_product_grid() {
    let model = ProductGridU1::new().unwrap();
    let fc = FamilyContexts::build(&model, ParamMesh::point(), 0.5).unwrap();
    let eq = EquivariantData::u1(model.charge().unwrap(), 24).unwrap();
    let report = hall_conductance(&fc, &eq, &grid_partition().unwrap(), 1e-8).unwrap();
    assert!(report.sigma.abs() < 1e-9, "σ = {}", report.sigma);
    assert!(report.imag_defect < 1e-9, "imaginary defect {}", report.imag_defect);
    assert!(
        report.partition_residual < 1e-9,
        "apex dependence {}",
        report.partition_residual
    );
}

#[test]
fn hall_conductance_stable_under_filter_width_and_apex() {
    let model = DressedGridU1::new().unwrap();
    let eq = EquivariantData::u1(model.charge().unwrap(), 24).unwrap();
    let base = grid_partition().unwrap();
    let moved = base.with_apex(vec![1.9, 0.85]).unwrap();
    let mut sigmas = Vec::new();
    for gap_fraction in [0.5, 0.25] {
        let fc =
            FamilyContexts::build(&model, ParamMesh::point(), gap_fraction).unwrap();
        for partition in [&base, &moved] {
            let report = hall_conductance(&fc, &eq, partition, 1e-8).unwrap();
            sigmas.push(report.sigma);
        }
    }
    let spread = sigmas
        .iter()
        .fold(0.0f64, |acc, &s| acc.max((s - sigmas[0]).abs()));
    assert!(
        spread < 1e-6,
        "σ values {sigmas:?} spread {spread} across Δ′ and apex choices"
    );
}

// -- equivariant bookkeeping -------------------------------------------------

#[test]
fn trivial_equivariance_reduces_to_plain_descent() {
    let family = SpinHalfSphere::new().unwrap();
    let fc = FamilyContexts::build(&family, ParamMesh::sphere2(4, 6).unwrap(), 0.5).unwrap();
    let g = connection_from_family(&fc).unwrap();
    let f = curvature(&fc, &g).unwrap();
    // The coarse mesh has O(h²) ≈ 0.5 curvature excitation; the comparison
    // here is bit-level equality of the two code paths, not accuracy.
    let plain = mc_descend(&fc, &f, 1.0).unwrap();
    let via_eq = equivariant_descend(&fc, &g, &EquivariantData::trivial(), 1.0).unwrap();
    let EquivariantSolution::Plain(sol) = via_eq else {
        panic!("trivial group must take the plain branch");
    };
    assert_eq!(sol.g0.len(), plain.g0.len());
    for (a, b) in sol.g0.iter().zip(&plain.g0) {
        assert_eq!(a.sub_chain(b).unwrap().max_coeff(), 0.0);
    }
}
