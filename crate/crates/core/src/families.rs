//! Built-in model families.
//!
//! Each family packages a lattice, a Hamiltonian density, a gapped-context
//! backend, and (where applicable) a symmetry charge and recommended
//! partition, ready for descent:
//!
//! * [`SpinHalfSphere`] — a single spin-1/2 in a unit Zeeman field over the
//!   two-sphere of field directions (unit Chern number);
//! * [`TranslationPump`] — a charge lump walked once around a ring of 8
//!   sites by partial-swap circuits (pump charge ±1 per cycle);
//! * [`ProductGridU1`] — an uncorrelated paramagnet on a 3×3 grid with
//!   on-site U(1) charge (Hall conductance exactly zero);
//! * [`DressedGridU1`] — the same grid dressed by a U(1)-commuting
//!   entangling circuit (still zero Hall response, but with noncommuting
//!   descent data; used for Δ′- and partition-stability checks);
//! * [`TfimInterval`] — a transverse-field Ising chain with the field swept
//!   over an interval (dense backend; used for filter-gauge experiments);
//! * [`Heisenberg2Site`] — the two-site Heisenberg exchange (dense
//!   backend; the smallest interacting test model).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::text::parse_operator;
use crate::algebra::LocalOperator;
use crate::complex::Chain;
use crate::descent::Family;
use crate::error::{Error, Result};
use crate::geometry::{ConicalPartition, Lattice};
use crate::spectral::{Circuit, FactorizedContext, Gate, GappedContext, SpectralContext};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `σ^z/2` as a dense single-site matrix.
fn half_z() -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5, 0.0), c(-0.5, 0.0)]))
}

// -- spin-half-sphere --------------------------------------------------------

/// A single spin-1/2 in a unit field: `H(n) = −(n·σ)/2` over the sphere of
/// directions `n`.  The ground band has unit Chern number.
pub struct SpinHalfSphere {
    lattice: Lattice,
}

impl SpinHalfSphere {
    pub fn new() -> Result<Self> {
        Ok(SpinHalfSphere {
            lattice: Lattice::point()?,
        })
    }

    fn h_op(&self, n: &[f64]) -> Result<LocalOperator> {
        parse_operator(
            &format!(
                "{} 0:x ; {} 0:y ; {} 0:z",
                -0.5 * n[0],
                -0.5 * n[1],
                -0.5 * n[2]
            ),
            &self.lattice,
        )
    }
}

impl Family for SpinHalfSphere {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        let mut h = Chain::new(0)?;
        h.set(&[0], &self.h_op(point)?.scale(c(0.0, 1.0)))?;
        Ok(h)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        Ok(SpectralContext::diagonalize(&self.h_op(point)?, &self.lattice)?.into())
    }
}

// -- translation pump --------------------------------------------------------

/// Number of sites on the pump ring.
pub const PUMP_SITES: usize = 8;
/// Cut position for the pump invariant (between sites 3 and 4).
pub const PUMP_APEX: f64 = 4.0;
/// Window half-width for the cut contraction (keeps the wrap bond out).
pub const PUMP_WINDOW: f64 = 2.5;

/// A charge lump walked around a ring of 8 spin-1/2 sites by sequential
/// partial swaps.
///
/// The base Hamiltonian holds one site (site 0) inverted: its ground state
/// carries charge −1/2 against the +1/2 background.  Over one protocol
/// cycle 8 swap segments move the lump right by one site each, returning it
/// to site 0; the pumped charge through a cut is −1 per forward cycle.
/// `reps` cycles run back to back inside `s ∈ [0, 1)`, so the pumped charge
/// is `−reps`.
pub struct TranslationPump {
    lattice: Lattice,
    reps: usize,
}

/// The partial-swap generator `(π/2)(SWAP − 1)`: Hermitian, vanishing on
/// the triplet sector, and `exp(i·1·K) = SWAP` exactly.
fn swap_generator() -> DMatrix<Complex64> {
    let mut k = DMatrix::zeros(4, 4);
    let half_pi = std::f64::consts::FRAC_PI_2;
    // SWAP − 1 on the middle block: |01⟩, |10⟩.
    k[(1, 1)] = c(-half_pi, 0.0);
    k[(1, 2)] = c(half_pi, 0.0);
    k[(2, 1)] = c(half_pi, 0.0);
    k[(2, 2)] = c(-half_pi, 0.0);
    k
}

impl TranslationPump {
    pub fn new(reps: usize) -> Result<Self> {
        if reps == 0 {
            return Err(Error::Model("pump needs at least one cycle".into()));
        }
        Ok(TranslationPump {
            lattice: Lattice::chain(PUMP_SITES)?,
            reps,
        })
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    /// Total number of swap segments in `s ∈ [0, 1)`.
    pub fn segments(&self) -> usize {
        PUMP_SITES * self.reps
    }

    /// Traceless on-site terms: `+σ^z/2` at the lump site, `−σ^z/2`
    /// elsewhere.
    fn site_terms(&self) -> Vec<DMatrix<Complex64>> {
        (0..PUMP_SITES)
            .map(|j| if j == 0 { half_z() } else { -half_z() })
            .collect()
    }

    /// Sites of the swap gate fired during segment `k`.
    fn segment_pair(&self, k: usize) -> Vec<usize> {
        vec![k % PUMP_SITES, (k + 1) % PUMP_SITES]
    }

    /// Segment index and progress within it at protocol time `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let tau = s * self.segments() as f64;
        let mut k = tau.floor() as usize;
        if k >= self.segments() {
            k = self.segments() - 1;
        }
        (k, tau - k as f64)
    }

    /// The protocol circuit `U(s)`: all completed swaps, then the running
    /// partial swap.
    fn circuit_at(&self, s: f64) -> Result<Circuit> {
        let (k, theta) = self.locate(s);
        let mut circuit = Circuit::new();
        for done in 0..k {
            circuit.push_layer(vec![Gate::from_generator(
                self.segment_pair(done),
                &swap_generator(),
                1.0,
                &self.lattice,
            )?])?;
        }
        if theta > 1e-12 {
            circuit.push_layer(vec![Gate::from_generator(
                self.segment_pair(k),
                &swap_generator(),
                theta,
                &self.lattice,
            )?])?;
        }
        Ok(circuit)
    }

    /// Uniform U(1) charge density `q_j = (i/2) σ^z_j`.
    pub fn charge(&self) -> Result<Chain> {
        uniform_half_z_charge(&self.lattice)
    }
}

/// The uniform charge density `q_j = (i/2) σ^z_j` on any spin-1/2 lattice.
pub fn uniform_half_z_charge(lattice: &Lattice) -> Result<Chain> {
    let mut q = Chain::new(0)?;
    for j in lattice.sites() {
        q.set(&[j], &parse_operator(&format!("0.5i {j}:z"), lattice)?)?;
    }
    Ok(q)
}

impl Family for TranslationPump {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        let circuit = self.circuit_at(point[0])?;
        let mut h = Chain::new(0)?;
        for j in 0..PUMP_SITES {
            let sign = if j == 0 { 0.5 } else { -0.5 };
            let base = parse_operator(&format!("{sign}i {j}:z"), &self.lattice)?;
            h.set(&[j], &circuit.conjugate(&base, &self.lattice)?)?;
        }
        Ok(h)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        let circuit = self.circuit_at(point[0])?;
        let dressing = if circuit.is_empty() {
            None
        } else {
            Some(circuit)
        };
        Ok(FactorizedContext::new(&self.lattice, self.site_terms(), dressing)?.into())
    }

    fn edge_transport(&self, tail: &[f64], head: &[f64]) -> Result<Option<Circuit>> {
        let s_a = tail[0];
        let mut s_b = head[0];
        if s_b <= s_a {
            s_b += 1.0; // wrap-around edge of the protocol circle
        }
        let (k_a, theta_a) = self.locate(s_a);
        let tau_b = s_b * self.segments() as f64;
        if tau_b > (k_a + 1) as f64 + 1e-9 {
            return Err(Error::Model(format!(
                "mesh edge [{s_a}, {s_b}] spans more than one swap segment; \
                 use a resolution divisible by {}",
                self.segments()
            )));
        }
        let theta_b = tau_b - k_a as f64;
        let mut circuit = Circuit::new();
        circuit.push_layer(vec![Gate::from_generator(
            self.segment_pair(k_a),
            &swap_generator(),
            theta_b - theta_a,
            &self.lattice,
        )?])?;
        Ok(Some(circuit))
    }
}

// -- product / dressed 2d U(1) models ---------------------------------------

/// Shared conical partition for the 3×3 grid models: a generic interior
/// apex with three sector rays that miss every site.
pub fn grid_partition() -> Result<ConicalPartition> {
    let pi = std::f64::consts::PI;
    ConicalPartition::sectors([1.37, 1.29], [0.5 * pi, 7.0 * pi / 6.0, 11.0 * pi / 6.0])
}

/// An uncorrelated paramagnet: `H = −Σ_j σ^z_j / 2` on a 3×3 grid, with
/// on-site U(1) charge.  Every charge-descent chain is diagonal, so the
/// Hall conductance vanishes identically.
pub struct ProductGridU1 {
    lattice: Lattice,
}

impl ProductGridU1 {
    pub fn new() -> Result<Self> {
        Ok(ProductGridU1 {
            lattice: Lattice::grid(3, 3)?,
        })
    }

    pub fn charge(&self) -> Result<Chain> {
        uniform_half_z_charge(&self.lattice)
    }
}

impl Family for ProductGridU1 {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, _point: &[f64]) -> Result<Chain> {
        let mut h = Chain::new(0)?;
        for j in self.lattice.sites() {
            h.set(&[j], &parse_operator(&format!("-0.5i {j}:z"), &self.lattice)?)?;
        }
        Ok(h)
    }

    fn context(&self, _point: &[f64]) -> Result<GappedContext> {
        let terms = (0..self.lattice.len()).map(|_| -half_z()).collect();
        Ok(FactorizedContext::new(&self.lattice, terms, None)?.into())
    }
}

/// The exchange generator `(XX + YY)/2 = σ⁺⊗σ⁻ + σ⁻⊗σ⁺`: Hermitian and
/// commuting with the pair charge.
fn xx_generator() -> DMatrix<Complex64> {
    let mut k = DMatrix::zeros(4, 4);
    k[(1, 2)] = c(1.0, 0.0);
    k[(2, 1)] = c(1.0, 0.0);
    k
}

/// The 3×3 paramagnet dressed by a depth-three U(1)-commuting circuit of
/// exchange rotations.  The spectrum stays integer-spaced (filters are
/// exactly Δ′-independent) while the charge-descent chains become
/// noncommuting, so the zero Hall response is reached through nontrivial
/// cancellations.
pub struct DressedGridU1 {
    lattice: Lattice,
    dressing: Circuit,
}

impl DressedGridU1 {
    pub fn new() -> Result<Self> {
        let lattice = Lattice::grid(3, 3)?;
        // Site index on the 3×3 grid: j = 3x + y.
        let mut dressing = Circuit::new();
        let layer = |pairs: &[(usize, usize)], alpha: f64, lat: &Lattice| -> Result<Vec<Gate>> {
            pairs
                .iter()
                .map(|&(a, b)| Gate::from_generator(vec![a, b], &xx_generator(), alpha, lat))
                .collect()
        };
        dressing.push_layer(layer(&[(0, 1), (3, 4), (6, 7)], 0.4, &lattice)?)?;
        dressing.push_layer(layer(&[(1, 2), (4, 5), (7, 8)], 0.3, &lattice)?)?;
        dressing.push_layer(layer(&[(0, 3), (4, 7), (2, 5)], 0.25, &lattice)?)?;
        Ok(DressedGridU1 { lattice, dressing })
    }

    pub fn charge(&self) -> Result<Chain> {
        uniform_half_z_charge(&self.lattice)
    }
}

impl Family for DressedGridU1 {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, _point: &[f64]) -> Result<Chain> {
        let mut h = Chain::new(0)?;
        for j in self.lattice.sites() {
            let base = parse_operator(&format!("-0.5i {j}:z"), &self.lattice)?;
            h.set(&[j], &self.dressing.conjugate(&base, &self.lattice)?)?;
        }
        Ok(h)
    }

    fn context(&self, _point: &[f64]) -> Result<GappedContext> {
        let terms = (0..self.lattice.len()).map(|_| -half_z()).collect();
        Ok(FactorizedContext::new(&self.lattice, terms, Some(self.dressing.clone()))?.into())
    }
}

// -- transverse-field Ising chain -------------------------------------------

/// A transverse-field Ising chain `H = −Σ x_j x_{j+1} − g Σ z_j` with the
/// field `g(s)` swept linearly over an interval (paramagnetic throughout).
pub struct TfimInterval {
    lattice: Lattice,
    g0: f64,
    g1: f64,
}

impl TfimInterval {
    pub fn new(n: usize, g0: f64, g1: f64) -> Result<Self> {
        if g0 <= 1.0 || g1 <= 1.0 {
            return Err(Error::Model(
                "the swept field must stay paramagnetic (g > 1)".into(),
            ));
        }
        Ok(TfimInterval {
            lattice: Lattice::chain(n)?,
            g0,
            g1,
        })
    }

    /// The static chain at `g0` (an interval family with zero sweep is the
    /// fixed model used by current and probe tasks).
    pub fn fixed(n: usize, g: f64) -> Result<Self> {
        Self::new(n, g, g)
    }

    pub fn field_at(&self, s: f64) -> f64 {
        self.g0 + (self.g1 - self.g0) * s
    }
}

impl Family for TfimInterval {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        let g = self.field_at(point.first().copied().unwrap_or(0.0));
        let n = self.lattice.len();
        let mut h = Chain::new(0)?;
        for j in 0..n {
            let mut text = format!("{}i {j}:x", -g);
            if j + 1 < n {
                text.push_str(&format!(" ; -1i {j}:z {}:z", j + 1));
            }
            h.set(&[j], &parse_operator(&text, &self.lattice)?)?;
        }
        Ok(h)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        let h = crate::complex::boundary_zero(&self.density(point)?, &self.lattice)?
            .total()
            .scale(c(0.0, -1.0));
        Ok(SpectralContext::diagonalize(&h, &self.lattice)?.into())
    }
}

// -- two-site Heisenberg -----------------------------------------------------

/// The two-site Heisenberg exchange `H = (σ₀·σ₁)/4` (dense backend).
pub struct Heisenberg2Site {
    lattice: Lattice,
}

impl Heisenberg2Site {
    pub fn new() -> Result<Self> {
        Ok(Heisenberg2Site {
            lattice: Lattice::chain(2)?,
        })
    }
}

impl Family for Heisenberg2Site {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, _point: &[f64]) -> Result<Chain> {
        let mut h = Chain::new(0)?;
        h.set(
            &[0],
            &parse_operator("0.25i 0:x 1:x ; 0.25i 0:y 1:y", &self.lattice)?,
        )?;
        h.set(&[1], &parse_operator("0.25i 0:z 1:z", &self.lattice)?)?;
        Ok(h)
    }

    fn context(&self, _point: &[f64]) -> Result<GappedContext> {
        let h = crate::complex::boundary_zero(&self.density(&[])?, &self.lattice)?
            .total()
            .scale(c(0.0, -1.0));
        Ok(SpectralContext::diagonalize(&h, &self.lattice)?.into())
    }
}
