//! Shared oracles for the integration suites.
//!
//! Everything here is computed from first principles — closed-form states,
//! hand-built dense simulations, and plain mesh combinatorics — so that the
//! descent and spectral engines can be checked against values frozen
//! independently of their own machinery.

#![allow(dead_code)]

use nalgebra::DVector;
use noether_core::complex::Chain;
use noether_core::geometry::Lattice;
use noether_core::mesh::ParamMesh;
use num_complex::Complex64;
use rand::Rng;

/// The ground state of `H(n) = −(n·σ)/2`: the spin coherent state aligned
/// with the unit vector `n`, in a branch-safe closed form.
///
/// For `n_z > −1` the unnormalized vector `(1 + n_z, n_x + i n_y)` is an
/// exact `+1` eigenvector of `n·σ` (squared norm `2(1 + n_z)`); near the
/// south pole `(n_x − i n_y, 1 − n_z)` is used instead.
pub fn spin_up_state(n: &[f64]) -> DVector<Complex64> {
    let (nx, ny, nz) = (n[0], n[1], n[2]);
    let (a, b) = if nz >= 0.0 {
        (Complex64::new(1.0 + nz, 0.0), Complex64::new(nx, ny))
    } else {
        (Complex64::new(nx, -ny), Complex64::new(1.0 - nz, 0.0))
    };
    let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    DVector::from_vec(vec![a / norm, b / norm])
}

/// First-principles Fukui–Hatsugai total curvature: the sum over faces of
/// the argument of the loop product of bare overlap links.
///
/// The link for a leg walked `a → b` is `⟨ψ(b)|ψ(a)⟩` (bra at the walk
/// destination), matching the transported-link convention of the descent
/// engine, so the two totals are directly comparable.  Continuum check for
/// [`spin_up_state`] on the sphere mesh (faces oriented along `dθ∧dφ`):
/// `⟨ψ(b)|ψ(a)⟩ ≈ exp(−i A·dx(a→b))` with the Berry connection
/// `A_φ = i⟨ψ|∂_φψ⟩ = −sin²(θ/2)`, so each face contributes
/// `+∮A·dl = ∫_F ∂_θA_φ dθdφ = −∫_F (sinθ/2) dθdφ` and the frozen total is
/// `−2π` (lower-band Chern number −1 in this orientation).
pub fn fh_total(mesh: &ParamMesh, state: impl Fn(&[f64]) -> DVector<Complex64>) -> f64 {
    let states: Vec<DVector<Complex64>> = mesh
        .vertices()
        .iter()
        .map(|v| state(&v.point))
        .collect();
    let mut total = 0.0;
    for face in mesh.faces() {
        let mut product = Complex64::new(1.0, 0.0);
        for &(eidx, sign) in &face.boundary {
            let e = &mesh.edges()[eidx];
            let link = states[e.head].dotc(&states[e.tail]);
            product *= if sign >= 0 { link } else { link.conj() };
        }
        total += product.arg();
    }
    total
}

/// Frozen Fukui–Hatsugai total for the spin-half sphere family.
pub const SPHERE_FH_TOTAL: f64 = -2.0 * std::f64::consts::PI;

/// Number of sites in the pump bookkeeping simulation.
const PUMP_N: usize = 8;

/// Charge-bookkeeping oracle for the translation pump: a hand-rolled dense
/// state-vector simulation of the swap protocol on the 8-site ring.
///
/// The initial state holds a down spin (charge −1/2) at site 0 against an
/// up background; segment `k` applies the partial swap on sites
/// `(k mod 8, k+1 mod 8)` in `substeps` micro-steps.  The pumped charge
/// through the cut at `x = 4` is the accumulated change of
/// `Q_right = Σ_{x_j > 4} σ^z_j/2` during the straddling segments (gate
/// `(3,4)`) only — flow through the wrap bond `(7,0)` crosses a different
/// cut and is excluded.  Each forward cycle carries the down spin once
/// through the cut, so the frozen value is `−reps` (telescoping makes the
/// result independent of `substeps`).
pub fn pump_bookkeeping_charge(reps: usize, substeps: usize) -> f64 {
    let dim = 1usize << PUMP_N;
    // Site 0 is the most significant bit; bit 1 means spin down.
    let mut psi = vec![Complex64::new(0.0, 0.0); dim];
    psi[1 << (PUMP_N - 1)] = Complex64::new(1.0, 0.0);
    let q_right: Vec<f64> = (0..dim)
        .map(|idx| {
            (0..PUMP_N)
                .filter(|&j| (j as f64 + 0.5) > 4.0)
                .map(|j| {
                    if idx >> (PUMP_N - 1 - j) & 1 == 0 {
                        0.5
                    } else {
                        -0.5
                    }
                })
                .sum()
        })
        .collect();
    let expect = |psi: &[Complex64]| -> f64 {
        psi.iter()
            .zip(&q_right)
            .map(|(a, q)| a.norm_sqr() * q)
            .sum()
    };
    let mut pumped = 0.0;
    for k in 0..PUMP_N * reps {
        let (a, b) = (k % PUMP_N, (k + 1) % PUMP_N);
        let straddles = a == 3;
        for _ in 0..substeps {
            let before = expect(&psi);
            apply_partial_swap(&mut psi, a, b, 1.0 / substeps as f64);
            if straddles {
                pumped += expect(&psi) - before;
            }
        }
    }
    pumped
}

/// Apply `exp(iθ·(π/2)(SWAP − 1))` on the qubit pair `(a, b)` in place.
///
/// On the span of `|↑↓⟩, |↓↑⟩` the generator is `(π/2)[[−1,1],[1,−1]]`
/// with eigenpairs `(1,1)/√2 ↦ 0` and `(1,−1)/√2 ↦ −π`, so the block
/// exponential is `[[m₀₀,m₀₁],[m₀₁,m₀₀]]` with `m₀₀ = (1+e^{−iπθ})/2`,
/// `m₀₁ = (1−e^{−iπθ})/2`; `θ = 1` gives the exact swap.
fn apply_partial_swap(psi: &mut [Complex64], a: usize, b: usize, theta: f64) {
    let phase = Complex64::from_polar(1.0, -std::f64::consts::PI * theta);
    let m00 = (Complex64::new(1.0, 0.0) + phase) * 0.5;
    let m01 = (Complex64::new(1.0, 0.0) - phase) * 0.5;
    let (pa, pb) = (PUMP_N - 1 - a, PUMP_N - 1 - b);
    for idx in 0..psi.len() {
        if idx >> pa & 1 == 1 && idx >> pb & 1 == 0 {
            let jdx = idx & !(1 << pa) | 1 << pb;
            let (x, y) = (psi[idx], psi[jdx]);
            psi[idx] = m00 * x + m01 * y;
            psi[jdx] = m01 * x + m00 * y;
        }
    }
}

/// A random chain whose coefficients are all of the form `±i·2^k`.
///
/// Sums of small integer multiples of a common power of two are exact in
/// floating point, so identities that cancel term-by-term (such as the
/// conical contraction of exact chains) come out as bitwise zeros on these
/// inputs.  Every ascending `degree+1`-site tuple carries one random
/// non-identity Pauli string.
pub fn random_dyadic_chain(
    degree: usize,
    lattice: &Lattice,
    rng: &mut impl Rng,
) -> Chain {
    let n = lattice.len();
    let mut chain = Chain::new(degree).expect("valid degree");
    let mut tuple = vec![0usize; degree + 1];
    ascending_tuples(n, degree + 1, &mut tuple, 0, 0, &mut |tuple| {
        let text: Vec<String> = tuple
            .iter()
            .map(|&j| {
                let op = ["x", "y", "z"][rng.random_range(0..3)];
                format!("{j}:{op}")
            })
            .collect();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let coeff = sign * (2.0f64).powi(rng.random_range(-2..3));
        let op = noether_core::algebra::text::parse_operator(
            &format!("{coeff}i {}", text.join(" ")),
            lattice,
        )
        .expect("valid operator text");
        chain.set(tuple, &op).expect("valid tuple");
    });
    chain
}

fn ascending_tuples(
    n: usize,
    len: usize,
    tuple: &mut Vec<usize>,
    depth: usize,
    start: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == len {
        f(tuple);
        return;
    }
    for j in start..n {
        tuple[depth] = j;
        ascending_tuples(n, len, tuple, depth + 1, j + 1, f);
    }
}
