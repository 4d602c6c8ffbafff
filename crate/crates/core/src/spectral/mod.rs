//! Finite-size spectral machinery: exact diagonalization, Heisenberg
//! evolution, frequency-domain spectral filters, locally generated paths,
//! and Lieb-Robinson probes.
//!
//! The filters realize the time-averaged evolutions `I_{H,w}` and `I_{H,W}`
//! purely in the frequency domain: in the eigenbasis of `H` the matrix
//! element at Bohr frequency `ω = E_m − E_n` is multiplied by the Fourier
//! response `f̂(ω)`.  With `ŵ` a smooth bump supported in `|ω| < Δ′` and
//! `Ŵ(ω) = (1 − ŵ(ω))/(iω)` the key identity
//! `A − I_W([iH, A]) = I_w(A)` holds exactly by construction, which also
//! pins the sign convention of the Bohr frequency.

pub mod circuit;
pub mod factorized;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::algebra::{DenseRealization, LocalOperator, DEFAULT_PRUNE, DENSE_CAP_DEFAULT};
use crate::complex::Derivation;
use crate::currents::unitary_from_generator;
use crate::error::{Error, Result};
use crate::geometry::{Lattice, SiteId};

pub use circuit::{Circuit, Gate};
pub use factorized::FactorizedContext;

/// Tolerance below which the first excited level counts as degenerate with
/// the ground level (gap undefined, context rejected).
pub const GROUND_DEGENERACY_TOL: f64 = 1e-10;
/// Eigenvector orthonormality residual allowed after diagonalization.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Eigendecomposition reconstruction residual allowed (relative to the
/// largest matrix entry).
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Identifier of the built-in bump profile.
pub const BUMP_PROFILE_ID: &str = "c-inf-bump";

/// Which spectral filter to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// The smooth bump `ŵ` (the even filter `w_Δ`): a smoothed ground-state
    /// projection.
    W,
    /// The integrated kernel `Ŵ(ω) = (1 − ŵ(ω))/(iω)` (the odd filter
    /// `W_Δ`): inverts the adjoint action of `H` off the low-frequency
    /// subspace.
    WInt,
}

/// Frequency responses of the filter pair for a fixed `Δ′`.
#[derive(Debug, Clone)]
pub struct FilterResponse {
    delta_prime: f64,
}

impl FilterResponse {
    pub fn new(delta_prime: f64) -> Result<Self> {
        if !(delta_prime > 0.0) || !delta_prime.is_finite() {
            return Err(Error::Spectral(format!(
                "filter width must be positive and finite, got {delta_prime}"
            )));
        }
        Ok(FilterResponse { delta_prime })
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    /// `ŵ(ω) = exp(1 − 1/(1 − (ω/Δ′)²))` for `|ω| < Δ′`, else 0.  Written
    /// as `exp(−x²/(1−x²))` to avoid cancellation near `ω = 0`; `ŵ(0) = 1`.
    pub fn w_hat(&self, omega: f64) -> f64 {
        let x = omega / self.delta_prime;
        if x.abs() >= 1.0 {
            0.0
        } else {
            (-x * x / (1.0 - x * x)).exp()
        }
    }

    /// `Ŵ(ω) = (1 − ŵ(ω))/(iω)`, with `Ŵ(0) = 0`.
    pub fn w_int_hat(&self, omega: f64) -> Complex64 {
        if omega == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0 - self.w_hat(omega), 0.0) / Complex64::new(0.0, omega)
        }
    }

    pub fn response(&self, kind: FilterKind, omega: f64) -> Complex64 {
        match kind {
            FilterKind::W => Complex64::new(self.w_hat(omega), 0.0),
            FilterKind::WInt => self.w_int_hat(omega),
        }
    }

    /// Residual of `1 − iω·Ŵ(ω) = ŵ(ω)`.
    pub fn identity_residual(&self, omega: f64) -> f64 {
        let lhs = Complex64::new(1.0, 0.0)
            - Complex64::new(0.0, omega) * self.w_int_hat(omega);
        (lhs - Complex64::new(self.w_hat(omega), 0.0)).norm()
    }

    pub fn profile_id(&self) -> &'static str {
        BUMP_PROFILE_ID
    }
}

/// A fully diagonalized finite realization of a gapped Hamiltonian:
/// eigenvalues ascending, orthonormal eigenvectors, unique ground state at
/// index 0, gap `Δ = E_1 − E_0`, and the filter width `Δ′ ∈ (0, Δ)`.
#[derive(Debug, Clone)]
pub struct SpectralContext {
    lattice: Lattice,
    sites: Vec<SiteId>,
    dims: Vec<usize>,
    h_op: LocalOperator,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<Complex64>,
    /// Always 0 after the ascending sort; kept explicit because callers
    /// index states through it.
    ground: usize,
    gap: f64,
    response: FilterResponse,
}

impl SpectralContext {
    pub fn diagonalize(h_op: &LocalOperator, lattice: &Lattice) -> Result<Self> {
        Self::diagonalize_capped(h_op, lattice, DENSE_CAP_DEFAULT)
    }

    pub fn diagonalize_capped(
        h_op: &LocalOperator,
        lattice: &Lattice,
        cap: usize,
    ) -> Result<Self> {
        let (dense, matrix) = Self::assemble_dense(h_op, lattice, cap)?;
        let n = dense.dim();
        let eig = matrix.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("finite eigenvalues")
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::<Complex64>::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            eigenvectors.set_column(new, &eig.eigenvectors.column(old));
        }
        Self::validate_parts(h_op, lattice, dense, matrix, eigenvalues, eigenvectors)
    }

    /// Rebuild a context from a stored eigendecomposition (e.g. a disk
    /// cache).  The Hamiltonian is re-assembled fresh and the decomposition
    /// re-validated, so a stale or corrupted store cannot produce a context
    /// that disagrees with [`SpectralContext::diagonalize`] beyond the
    /// reconstruction tolerance.
    pub fn from_parts(
        h_op: &LocalOperator,
        lattice: &Lattice,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<Complex64>,
    ) -> Result<Self> {
        let (dense, matrix) = Self::assemble_dense(h_op, lattice, DENSE_CAP_DEFAULT)?;
        let n = dense.dim();
        if eigenvalues.len() != n || eigenvectors.nrows() != n || eigenvectors.ncols() != n {
            return Err(Error::Spectral(format!(
                "stored eigendecomposition has {} values and {}x{} vectors for dimension {n}",
                eigenvalues.len(),
                eigenvectors.nrows(),
                eigenvectors.ncols()
            )));
        }
        if eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(Error::Spectral("stored eigenvalues are not finite".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Spectral(
                "stored eigenvalues are not ascending".into(),
            ));
        }
        Self::validate_parts(h_op, lattice, dense, matrix, eigenvalues, eigenvectors)
    }

    fn assemble_dense(
        h_op: &LocalOperator,
        lattice: &Lattice,
        cap: usize,
    ) -> Result<(DenseRealization, DMatrix<Complex64>)> {
        let sa = h_op.self_adjoint_defect();
        if sa > 1e-10 {
            return Err(Error::Spectral(format!(
                "Hamiltonian must be self-adjoint (defect {sa:e})"
            )));
        }
        let sites: Vec<SiteId> = (0..lattice.len()).collect();
        let dense = DenseRealization::assemble(h_op, lattice, &sites, cap)?;
        if dense.dim() < 2 {
            return Err(Error::Spectral(
                "spectral context needs at least a two-dimensional Hilbert space".into(),
            ));
        }
        let matrix = dense.matrix().clone();
        Ok((dense, matrix))
    }

    fn validate_parts(
        h_op: &LocalOperator,
        lattice: &Lattice,
        dense: DenseRealization,
        matrix: DMatrix<Complex64>,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<Complex64>,
    ) -> Result<Self> {
        let n = dense.dim();
        let ortho = (eigenvectors.adjoint() * &eigenvectors
            - DMatrix::<Complex64>::identity(n, n))
        .iter()
        .fold(0.0f64, |acc, c| acc.max(c.norm()));
        if ortho > ORTHONORMALITY_TOL {
            return Err(Error::Tolerance {
                context: "eigenvector orthonormality".into(),
                residual: ortho,
                tolerance: ORTHONORMALITY_TOL,
            });
        }
        let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            eigenvalues.iter().map(|&e| Complex64::new(e, 0.0)),
        ));
        let scale = 1.0 + matrix.iter().fold(0.0f64, |acc, c| acc.max(c.norm()));
        let recon = (&eigenvectors * lambda * eigenvectors.adjoint() - &matrix)
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.norm()))
            / scale;
        if recon > RECONSTRUCTION_TOL {
            return Err(Error::Tolerance {
                context: "eigendecomposition reconstruction".into(),
                residual: recon,
                tolerance: RECONSTRUCTION_TOL,
            });
        }

        let gap = eigenvalues[1] - eigenvalues[0];
        if gap <= GROUND_DEGENERACY_TOL {
            return Err(Error::Spectral(format!(
                "ground state is degenerate (E1 − E0 = {gap:e}); gap undefined"
            )));
        }
        let response = FilterResponse::new(gap / 2.0)?;
        Ok(SpectralContext {
            lattice: lattice.clone(),
            sites: (0..lattice.len()).collect(),
            dims: dense.dims().to_vec(),
            h_op: h_op.clone(),
            eigenvalues,
            eigenvectors,
            ground: 0,
            gap,
            response,
        })
    }

    /// Replace the filter width; must stay strictly inside `(0, Δ)`.
    pub fn with_delta_prime(mut self, delta_prime: f64) -> Result<Self> {
        if !(delta_prime > 0.0 && delta_prime < self.gap) {
            return Err(Error::Spectral(format!(
                "Δ′ must lie in (0, Δ) = (0, {}), got {delta_prime}",
                self.gap
            )));
        }
        self.response = FilterResponse::new(delta_prime)?;
        Ok(self)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn hamiltonian(&self) -> &LocalOperator {
        &self.h_op
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvector columns, in eigenvalue order.
    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.eigenvectors
    }

    pub fn ground_index(&self) -> usize {
        self.ground
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[self.ground]
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn delta_prime(&self) -> f64 {
        self.response.delta_prime()
    }

    pub fn response(&self) -> &FilterResponse {
        &self.response
    }

    pub fn ground_state(&self) -> DVector<Complex64> {
        self.eigenvectors.column(self.ground).into_owned()
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn assemble(&self, a: &LocalOperator) -> Result<DenseRealization> {
        DenseRealization::assemble(a, &self.lattice, &self.sites, usize::MAX)
    }

    /// Dense matrix of `a` in the eigenbasis of `H`.
    pub fn to_eigenbasis(&self, a: &LocalOperator) -> Result<DMatrix<Complex64>> {
        let dense = self.assemble(a)?;
        Ok(self.eigenvectors.adjoint() * dense.matrix() * &self.eigenvectors)
    }

    fn from_eigenbasis(&self, m: DMatrix<Complex64>) -> LocalOperator {
        let back = &self.eigenvectors * m * self.eigenvectors.adjoint();
        DenseRealization::from_matrix(self.sites.clone(), self.dims.clone(), back)
            .to_local_operator(DEFAULT_PRUNE)
    }

    /// Apply a diagonal-in-frequency multiplier to the matrix elements of
    /// `a`: entry `(m, n)` is scaled by `f(E_m − E_n)`.
    pub fn filter_with(
        &self,
        a: &LocalOperator,
        f: impl Fn(f64) -> Complex64,
    ) -> Result<LocalOperator> {
        let mut m = self.to_eigenbasis(a)?;
        for row in 0..m.nrows() {
            for col in 0..m.ncols() {
                let omega = self.eigenvalues[row] - self.eigenvalues[col];
                m[(row, col)] *= f(omega);
            }
        }
        Ok(self.from_eigenbasis(m))
    }

    /// The spectral filter `I_{H,w}` or `I_{H,W}`.
    pub fn filter(&self, a: &LocalOperator, kind: FilterKind) -> Result<LocalOperator> {
        self.filter_with(a, |omega| self.response.response(kind, omega))
    }

    /// Heisenberg evolution `α(t)(A) = e^{iHt} A e^{−iHt}`.
    pub fn heisenberg_evolve(&self, a: &LocalOperator, t: f64) -> Result<LocalOperator> {
        self.filter_with(a, |omega| Complex64::new(0.0, omega * t).exp())
    }

    /// Ground-state expectation `⟨ψ|A|ψ⟩`.
    pub fn expectation(&self, a: &LocalOperator) -> Result<Complex64> {
        let dense = self.assemble(a)?;
        Ok(dense.expectation(&self.ground_state()))
    }

    /// Max over probes `B` of `|⟨[A, B]⟩_ψ|`: the excitation residual whose
    /// vanishing asserts membership in the state-preserving subalgebra.
    pub fn does_not_excite(&self, a: &LocalOperator, probes: &[LocalOperator]) -> Result<f64> {
        let psi = self.ground_state();
        let da = self.assemble(a)?;
        let a_psi = da.matrix() * &psi;
        let a_adj_psi = da.matrix().adjoint() * &psi;
        let mut worst = 0.0f64;
        for b in probes {
            let db = self.assemble(b)?;
            let b_psi = db.matrix() * &psi;
            let b_adj_psi = db.matrix().adjoint() * &psi;
            // ⟨AB⟩ − ⟨BA⟩ via inner products with ψ.
            let ab = a_adj_psi.dotc(&b_psi);
            let ba = b_adj_psi.dotc(&a_psi);
            worst = worst.max((ab - ba).norm());
        }
        Ok(worst)
    }
}

/// All basis strings on one or two sites within Euclidean distance
/// `max_sep`: the default probe family for excitation residuals.
pub fn default_probe_basis(lattice: &Lattice, max_sep: f64) -> Vec<LocalOperator> {
    let one = Complex64::new(1.0, 0.0);
    let mut probes = Vec::new();
    for j in 0..lattice.len() {
        let dj = lattice.onsite_dim(j);
        for a in 1..dj * dj {
            probes.push(LocalOperator::string(&[(j, a)], one).expect("distinct sites"));
        }
    }
    for j in 0..lattice.len() {
        for k in j + 1..lattice.len() {
            let dist: f64 = lattice
                .position(j)
                .iter()
                .zip(lattice.position(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist > max_sep + 1e-12 {
                continue;
            }
            let (dj, dk) = (lattice.onsite_dim(j), lattice.onsite_dim(k));
            for a in 1..dj * dj {
                for b in 1..dk * dk {
                    probes.push(
                        LocalOperator::string(&[(j, a), (k, b)], one).expect("distinct sites"),
                    );
                }
            }
        }
    }
    probes
}

// -- locally generated paths ------------------------------------------------

/// A locally generated path: a time-dependent generator `s ↦ G(s)` on the
/// unit parameter interval plus an integration tolerance.
pub struct LgpSchedule {
    generator: Box<dyn Fn(f64) -> Result<Derivation> + Send + Sync>,
    tolerance: f64,
}

impl LgpSchedule {
    pub fn new(
        generator: impl Fn(f64) -> Result<Derivation> + Send + Sync + 'static,
        tolerance: f64,
    ) -> Self {
        LgpSchedule {
            generator: Box::new(generator),
            tolerance,
        }
    }

    pub fn constant(g: Derivation, tolerance: f64) -> Self {
        LgpSchedule::new(move |_| Ok(g.clone()), tolerance)
    }

    /// The generator sampled at `s`, validated anti-self-adjoint traceless.
    pub fn generator_at(&self, s: f64) -> Result<Derivation> {
        let g = (self.generator)(s)?;
        let total = g.total();
        let asa = total.anti_self_adjoint_defect();
        let tr = total.trace_state().norm();
        if asa > 1e-10 || tr > 1e-12 {
            return Err(Error::Spectral(format!(
                "LGP generator at s={s} is not anti-self-adjoint traceless \
                 (asa defect {asa:e}, trace {tr:e})"
            )));
        }
        Ok(g)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// The inverse path, generated by `−G(1−s)`.
    pub fn inverse(self) -> LgpSchedule {
        let tol = self.tolerance;
        let generator = self.generator;
        LgpSchedule {
            generator: Box::new(move |s| {
                Ok((generator)(1.0 - s)?.scale(Complex64::new(-1.0, 0.0)))
            }),
            tolerance: tol,
        }
    }
}

/// `exp(Ω)` for an anti-self-adjoint dense matrix, via the eigenbasis of
/// the Hermitian generator `K = −iΩ`.
fn expm_asa(omega: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let k = omega.map(|c| c * Complex64::new(0.0, -1.0));
    unitary_from_generator(&k, 1.0)
}

fn lgp_unitary(
    schedule: &LgpSchedule,
    lattice: &Lattice,
    sites: &[SiteId],
    cap: usize,
    n_steps: usize,
) -> Result<DMatrix<Complex64>> {
    let total: usize = sites.iter().map(|&j| lattice.onsite_dim(j)).product();
    if total > cap {
        return Err(Error::DenseCap { dim: total, cap });
    }
    // Gauss-Legendre nodes for the 4th-order Magnus step.
    let c1 = 0.5 - 3.0f64.sqrt() / 6.0;
    let c2 = 0.5 + 3.0f64.sqrt() / 6.0;
    let h = 1.0 / n_steps as f64;
    let mut u = DMatrix::<Complex64>::identity(total, total);
    for k in 0..n_steps {
        let s0 = k as f64 * h;
        let g1 = schedule.generator_at(s0 + c1 * h)?.total();
        let g2 = schedule.generator_at(s0 + c2 * h)?.total();
        let d1 = DenseRealization::assemble(&g1, lattice, sites, cap)?;
        let d2 = DenseRealization::assemble(&g2, lattice, sites, cap)?;
        let m1 = d1.matrix();
        let m2 = d2.matrix();
        // Right-sided time ordering U'(s) = U(s)·g(s): the step unitary is
        // the adjoint of the 4th-order Magnus exponential for −g.
        let omega = (m1 + m2).scale(h / 2.0)
            + (m1 * m2 - m2 * m1).scale(3.0f64.sqrt() * h * h / 12.0);
        u *= expm_asa(&omega)?;
    }
    Ok(u)
}

/// Evolve `a` along a locally generated path: solves
/// `dα(s)(A)/ds = α(s)(G(s)(A))` by 4th-order time-ordered stepping with
/// step halving until two refinements agree within the schedule tolerance.
pub fn lgp_evolve(
    a: &LocalOperator,
    schedule: &LgpSchedule,
    lattice: &Lattice,
) -> Result<LocalOperator> {
    lgp_evolve_capped(a, schedule, lattice, DENSE_CAP_DEFAULT)
}

pub fn lgp_evolve_capped(
    a: &LocalOperator,
    schedule: &LgpSchedule,
    lattice: &Lattice,
    cap: usize,
) -> Result<LocalOperator> {
    let sites: Vec<SiteId> = (0..lattice.len()).collect();
    let da = DenseRealization::assemble(a, lattice, &sites, cap)?;
    let dims: Vec<usize> = sites.iter().map(|&j| lattice.onsite_dim(j)).collect();
    let mut prev: Option<LocalOperator> = None;
    let mut n_steps = 8;
    const MAX_STEPS: usize = 512;
    while n_steps <= MAX_STEPS {
        let u = lgp_unitary(schedule, lattice, &sites, cap, n_steps)?;
        let evolved = &u * da.matrix() * u.adjoint();
        let result = DenseRealization::from_matrix(sites.clone(), dims.clone(), evolved)
            .to_local_operator(DEFAULT_PRUNE);
        if let Some(p) = &prev {
            if result.sub(p).max_coeff() <= schedule.tolerance() {
                return Ok(result);
            }
        }
        prev = Some(result);
        n_steps *= 2;
    }
    Err(Error::Spectral(format!(
        "LGP integration did not converge to {:e} within {MAX_STEPS} steps",
        schedule.tolerance()
    )))
}

// -- Lieb-Robinson probe ----------------------------------------------------

/// One row of the Lieb-Robinson table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSample {
    pub t: f64,
    pub r: f64,
    pub norm: f64,
}

/// Exact commutator norms `‖[α(t)(A), B_r]‖` for each probe distance and
/// time: a light-cone diagnostic.
pub fn lieb_robinson_probe(
    ctx: &SpectralContext,
    a: &LocalOperator,
    probes: &[(f64, LocalOperator)],
    times: &[f64],
) -> Result<Vec<LrSample>> {
    let mut table = Vec::with_capacity(times.len() * probes.len());
    for &t in times {
        let at = ctx.heisenberg_evolve(a, t)?;
        let da = ctx.assemble(&at)?;
        for (r, b) in probes {
            let db = ctx.assemble(b)?;
            let comm = da.matrix() * db.matrix() - db.matrix() * da.matrix();
            let norm = DenseRealization::from_matrix(
                ctx.sites.clone(),
                ctx.dims.clone(),
                comm,
            )
            .operator_norm();
            table.push(LrSample { t, r: *r, norm });
        }
    }
    Ok(table)
}

/// Render a Lieb-Robinson table as CSV (`t,r,norm` header).
pub fn lr_table_to_csv(table: &[LrSample]) -> String {
    let mut out = String::from("t,r,norm\n");
    for row in table {
        out.push_str(&format!("{},{},{}\n", row.t, row.r, row.norm));
    }
    out
}

/// A gapped finite realization that descent and state machinery can drive:
/// either a dense [`SpectralContext`] or a [`FactorizedContext`].
pub trait GappedBackend {
    fn lattice(&self) -> &Lattice;
    fn gap(&self) -> f64;
    fn delta_prime(&self) -> f64;
    /// The realized Hamiltonian as a sparse operator.
    fn hamiltonian_op(&self) -> Result<LocalOperator>;
    fn expectation(&self, a: &LocalOperator) -> Result<Complex64>;
    fn filter(&self, a: &LocalOperator, kind: FilterKind) -> Result<LocalOperator>;
    fn evolve(&self, a: &LocalOperator, t: f64) -> Result<LocalOperator>;
    /// Max over probes `B` of `|⟨[A, B]⟩_ψ|`.
    fn does_not_excite(&self, a: &LocalOperator, probes: &[LocalOperator]) -> Result<f64>;
}

impl GappedBackend for SpectralContext {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn gap(&self) -> f64 {
        self.gap
    }

    fn delta_prime(&self) -> f64 {
        self.response.delta_prime()
    }

    fn hamiltonian_op(&self) -> Result<LocalOperator> {
        Ok(self.h_op.clone())
    }

    fn expectation(&self, a: &LocalOperator) -> Result<Complex64> {
        SpectralContext::expectation(self, a)
    }

    fn filter(&self, a: &LocalOperator, kind: FilterKind) -> Result<LocalOperator> {
        SpectralContext::filter(self, a, kind)
    }

    fn evolve(&self, a: &LocalOperator, t: f64) -> Result<LocalOperator> {
        SpectralContext::heisenberg_evolve(self, a, t)
    }

    fn does_not_excite(&self, a: &LocalOperator, probes: &[LocalOperator]) -> Result<f64> {
        SpectralContext::does_not_excite(self, a, probes)
    }
}

/// A gapped context with a chosen backend: dense exact diagonalization or a
/// factorized (optionally circuit-dressed) on-site realization.  Descent and
/// state machinery take this enum so each model can pick the backend that is
/// exact and affordable for it.
#[derive(Debug, Clone)]
pub enum GappedContext {
    Dense(SpectralContext),
    Factorized(FactorizedContext),
}

impl GappedContext {
    pub fn with_delta_prime(self, delta_prime: f64) -> Result<Self> {
        Ok(match self {
            GappedContext::Dense(c) => GappedContext::Dense(c.with_delta_prime(delta_prime)?),
            GappedContext::Factorized(c) => {
                GappedContext::Factorized(c.with_delta_prime(delta_prime)?)
            }
        })
    }

    /// Ground-state vector in the full tensor-product basis (site order,
    /// first site most significant).  Rejected above the dense cap.
    pub fn ground_state_dense(&self) -> Result<DVector<Complex64>> {
        match self {
            GappedContext::Dense(c) => Ok(c.ground_state()),
            GappedContext::Factorized(c) => c.ground_state_dense(),
        }
    }

    /// Dense matrix of `a` over the full lattice in the same basis as
    /// [`Self::ground_state_dense`].  Rejected above the dense cap.
    pub fn dense_matrix(&self, a: &LocalOperator) -> Result<DMatrix<Complex64>> {
        let lattice = self.lattice();
        let sites: Vec<SiteId> = lattice.sites().collect();
        let dense = DenseRealization::assemble(a, lattice, &sites, DENSE_CAP_DEFAULT)?;
        Ok(dense.matrix().clone())
    }
}

impl From<SpectralContext> for GappedContext {
    fn from(c: SpectralContext) -> Self {
        GappedContext::Dense(c)
    }
}

impl From<FactorizedContext> for GappedContext {
    fn from(c: FactorizedContext) -> Self {
        GappedContext::Factorized(c)
    }
}

impl GappedBackend for GappedContext {
    fn lattice(&self) -> &Lattice {
        match self {
            GappedContext::Dense(c) => GappedBackend::lattice(c),
            GappedContext::Factorized(c) => GappedBackend::lattice(c),
        }
    }

    fn gap(&self) -> f64 {
        match self {
            GappedContext::Dense(c) => GappedBackend::gap(c),
            GappedContext::Factorized(c) => GappedBackend::gap(c),
        }
    }

    fn delta_prime(&self) -> f64 {
        match self {
            GappedContext::Dense(c) => GappedBackend::delta_prime(c),
            GappedContext::Factorized(c) => GappedBackend::delta_prime(c),
        }
    }

    fn hamiltonian_op(&self) -> Result<LocalOperator> {
        match self {
            GappedContext::Dense(c) => GappedBackend::hamiltonian_op(c),
            GappedContext::Factorized(c) => GappedBackend::hamiltonian_op(c),
        }
    }

    fn expectation(&self, a: &LocalOperator) -> Result<Complex64> {
        match self {
            GappedContext::Dense(c) => GappedBackend::expectation(c, a),
            GappedContext::Factorized(c) => GappedBackend::expectation(c, a),
        }
    }

    fn filter(&self, a: &LocalOperator, kind: FilterKind) -> Result<LocalOperator> {
        match self {
            GappedContext::Dense(c) => GappedBackend::filter(c, a, kind),
            GappedContext::Factorized(c) => GappedBackend::filter(c, a, kind),
        }
    }

    fn evolve(&self, a: &LocalOperator, t: f64) -> Result<LocalOperator> {
        match self {
            GappedContext::Dense(c) => GappedBackend::evolve(c, a, t),
            GappedContext::Factorized(c) => GappedBackend::evolve(c, a, t),
        }
    }

    fn does_not_excite(&self, a: &LocalOperator, probes: &[LocalOperator]) -> Result<f64> {
        match self {
            GappedContext::Dense(c) => GappedBackend::does_not_excite(c, a, probes),
            GappedContext::Factorized(c) => GappedBackend::does_not_excite(c, a, probes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::text::parse_operator;
    use crate::complex::random_asa_operator;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(text: &str, lat: &Lattice) -> LocalOperator {
        parse_operator(text, lat).unwrap()
    }

    /// Paramagnetic transverse-field Ising Hamiltonian (self-adjoint).
    fn tfim(lat: &Lattice, g: f64) -> LocalOperator {
        let n = lat.len();
        let mut parts = Vec::new();
        for j in 0..n - 1 {
            parts.push(format!("-1 {j}:z {}:z", j + 1));
        }
        for j in 0..n {
            parts.push(format!("{} {j}:x", -g));
        }
        op(&parts.join(" ; "), lat)
    }

    #[test]
    fn single_spin_context_has_gap_two() {
        let lat = Lattice::chain(1).unwrap();
        let ctx = SpectralContext::diagonalize(&op("1 0:z", &lat), &lat).unwrap();
        assert_abs_diff_eq!(ctx.eigenvalues()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.eigenvalues()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.gap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.delta_prime(), 1.0, epsilon = 1e-12);
        assert_eq!(ctx.ground_index(), 0);
    }

    #[test]
    fn heisenberg_two_site_gap_matches_hand_value() {
        // H = (σ·σ)/4 has the singlet at −3/4 and the triplet at +1/4:
        // the gap is exactly 1.
        let lat = Lattice::chain(2).unwrap();
        let h = op("0.25 0:x 1:x ; 0.25 0:y 1:y ; 0.25 0:z 1:z", &lat);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        assert_abs_diff_eq!(ctx.ground_energy(), -0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.gap(), 1.0, epsilon = 1e-12);
        // The singlet is unique; the triplet is threefold degenerate.
        assert_abs_diff_eq!(ctx.eigenvalues()[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn eight_site_tfim_is_gapped_and_reconstructs() {
        let lat = Lattice::chain(8).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 2.0), &lat).unwrap();
        assert!(ctx.gap() > 0.5, "paramagnetic gap, got {}", ctx.gap());
        assert_eq!(ctx.dim(), 256);
    }

    #[test]
    fn degenerate_ground_state_rejected() {
        let lat = Lattice::chain(2).unwrap();
        // σ^z σ^z has two ground states (↑↓ and ↓↑).
        let err = SpectralContext::diagonalize(&op("1 0:z 1:z", &lat), &lat);
        assert!(matches!(err, Err(Error::Spectral(_))));
    }

    #[test]
    fn delta_prime_must_stay_inside_gap() {
        let lat = Lattice::chain(1).unwrap();
        let ctx = SpectralContext::diagonalize(&op("1 0:z", &lat), &lat).unwrap();
        assert!(ctx.clone().with_delta_prime(2.5).is_err());
        assert!(ctx.clone().with_delta_prime(0.0).is_err());
        assert!(ctx.with_delta_prime(1.7).is_ok());
    }

    #[test]
    fn evolution_fixes_commuting_observables() {
        let lat = Lattice::chain(2).unwrap();
        let ctx = SpectralContext::diagonalize(&op("1 0:z ; 0.3 1:z", &lat), &lat).unwrap();
        let a = op("1 0:z ; 0.25 0:z 1:z", &lat);
        for &t in &[0.0, 0.7, 3.1] {
            let at = ctx.heisenberg_evolve(&a, t).unwrap();
            assert!(at.sub(&a).max_coeff() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn larmor_precession_closed_form() {
        // H = (ω/2)σ^z evolves σ^x into cos(ωt)σ^x − sin(ωt)σ^y.
        let lat = Lattice::chain(1).unwrap();
        let omega = 1.3;
        let h = op("1 0:z", &lat).scale(Complex64::new(omega / 2.0, 0.0));
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let t = 0.9;
        let evolved = ctx.heisenberg_evolve(&op("1 0:x", &lat), t).unwrap();
        let expect = op("1 0:x", &lat)
            .scale(Complex64::new((omega * t).cos(), 0.0))
            .add(&op("1 0:y", &lat).scale(Complex64::new(-(omega * t).sin(), 0.0)));
        assert!(evolved.sub(&expect).max_coeff() < 1e-12);
    }

    #[test]
    fn evolution_preserves_norm() {
        let lat = Lattice::chain(3).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 1.4), &lat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_asa_operator(&[0, 1], &lat, &mut rng);
        let na = a.norm_exact(&lat).unwrap();
        let nt = ctx
            .heisenberg_evolve(&a, 0.8)
            .unwrap()
            .norm_exact(&lat)
            .unwrap();
        assert_abs_diff_eq!(na, nt, epsilon = 1e-10);
    }

    #[test]
    fn energy_expectation_is_conserved() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim(&lat, 1.1);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let e0 = ctx.expectation(&h).unwrap();
        for &t in &[0.3, 1.7] {
            let et = ctx
                .expectation(&ctx.heisenberg_evolve(&h, t).unwrap())
                .unwrap();
            assert!((et - e0).norm() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn filter_response_identity_and_support() {
        let resp = FilterResponse::new(0.8).unwrap();
        assert_abs_diff_eq!(resp.w_hat(0.0), 1.0, epsilon = 1e-15);
        for k in 0..200 {
            let omega = -3.0 + 0.03 * k as f64;
            assert!(resp.identity_residual(omega) < 1e-14, "omega={omega}");
            assert_abs_diff_eq!(resp.w_hat(omega), resp.w_hat(-omega), epsilon = 1e-15);
            if omega.abs() >= 0.8 {
                assert_eq!(resp.w_hat(omega), 0.0);
            }
        }
        assert_eq!(resp.w_int_hat(0.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn filter_w_annihilates_fast_oscillations() {
        let lat = Lattice::chain(1).unwrap();
        let ctx = SpectralContext::diagonalize(&op("1 0:z", &lat), &lat).unwrap();
        // Only Bohr frequencies ±2 appear in σ^x; Δ′ = 1 kills them.
        let filtered = ctx.filter(&op("1 0:x", &lat), FilterKind::W).unwrap();
        assert!(filtered.max_coeff() < 1e-14);
        // Diagonal observables sit at ω = 0 where ŵ = 1.
        let kept = ctx.filter(&op("1 0:z", &lat), FilterKind::W).unwrap();
        assert!(kept.sub(&op("1 0:z", &lat)).max_coeff() < 1e-12);
    }

    #[test]
    fn filter_identity_is_exact_on_random_operators() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim(&lat, 0.9);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = random_asa_operator(&[0, 1, 2], &lat, &mut rng);
            // A − I_W([iH, A]) = I_w(A).
            let ih = h.scale(Complex64::new(0.0, 1.0));
            let da = ih.commutator(&a, &lat);
            let lhs = a.sub(&ctx.filter(&da, FilterKind::WInt).unwrap());
            let rhs = ctx.filter(&a, FilterKind::W).unwrap();
            assert!(lhs.sub(&rhs).max_coeff() < 1e-12);
        }
    }

    #[test]
    fn filters_commute_with_adjoint() {
        // Both filters are chain maps on anti-self-adjoint operators: they
        // commute with the adjoint (Ŵ is odd and purely imaginary).
        let lat = Lattice::chain(2).unwrap();
        let h = tfim(&lat, 1.2);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let a = op("0.4 0:x 1:y ; 0.3i 0:z", &lat);
        for kind in [FilterKind::W, FilterKind::WInt] {
            let left = ctx.filter(&a.adjoint(), kind).unwrap();
            let right = ctx.filter(&a, kind).unwrap().adjoint();
            assert!(left.sub(&right).max_coeff() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn filter_composition_squares_the_response() {
        let lat = Lattice::chain(3).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 1.3), &lat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_asa_operator(&[0, 2], &lat, &mut rng);
        let twice = ctx
            .filter(&ctx.filter(&a, FilterKind::W).unwrap(), FilterKind::W)
            .unwrap();
        let squared = ctx
            .filter_with(&a, |omega| {
                let w = ctx.response().w_hat(omega);
                Complex64::new(w * w, 0.0)
            })
            .unwrap();
        assert!(twice.sub(&squared).max_coeff() < 1e-12);
    }

    #[test]
    fn filtered_operators_do_not_excite() {
        let lat = Lattice::chain(4).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 2.0), &lat).unwrap();
        let probes = default_probe_basis(&lat, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = random_asa_operator(&[1, 2], &lat, &mut rng);
        let filtered = ctx.filter(&a, FilterKind::W).unwrap();
        assert!(ctx.does_not_excite(&filtered, &probes).unwrap() < 1e-10);
        // The unfiltered operator generically excites the state.
        assert!(ctx.does_not_excite(&a, &probes).unwrap() > 1e-3);
    }

    #[test]
    fn ground_projector_weighted_diagonal_does_not_excite() {
        let lat = Lattice::chain(2).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 1.5), &lat).unwrap();
        // i·P_ψ expressed back in the operator basis.
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        m[(0, 0)] = Complex64::new(0.0, 1.0);
        let a = ctx.from_eigenbasis(m);
        let probes = default_probe_basis(&lat, 2.0);
        assert!(ctx.does_not_excite(&a, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn factorization_lemma_on_gapped_contexts() {
        let lat = Lattice::chain(4).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 2.0), &lat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let psi = ctx.ground_state();
        for _ in 0..4 {
            let a = random_asa_operator(&[0, 1], &lat, &mut rng);
            let b = random_asa_operator(&[2, 3], &lat, &mut rng);
            let fa = ctx.filter(&a, FilterKind::W).unwrap();
            let dfa = ctx.assemble(&fa).unwrap();
            let db = ctx.assemble(&b).unwrap();
            let prod = (psi.adjoint() * dfa.matrix() * db.matrix() * &psi)[(0, 0)];
            let split = dfa.expectation(&psi) * db.expectation(&psi);
            assert!((prod - split).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_lgp_matches_heisenberg_evolution() {
        let lat = Lattice::chain(3).unwrap();
        let h = tfim(&lat, 0.8);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let g = Derivation::from_operator(&h.scale(Complex64::new(0.0, 1.0)), &lat);
        let schedule = LgpSchedule::constant(g, 1e-10);
        let a = op("1 1:x ; 0.5 0:z 1:z", &lat);
        let via_lgp = lgp_evolve(&a, &schedule, &lat).unwrap();
        let via_ed = ctx.heisenberg_evolve(&a, 1.0).unwrap();
        assert!(via_lgp.sub(&via_ed).max_coeff() < 1e-8);
    }

    #[test]
    fn inverse_path_undoes_the_path() {
        let lat = Lattice::chain(2).unwrap();
        // A genuinely time-dependent generator.
        let g0 = op("1i 0:x 1:x", &lat);
        let g1 = op("1i 0:z ; 0.5i 1:y", &lat);
        let lat_c = lat.clone();
        let schedule = LgpSchedule::new(
            move |s| {
                let mix = g0
                    .scale(Complex64::new(1.0 - s, 0.0))
                    .add(&g1.scale(Complex64::new(s, 0.0)));
                Ok(Derivation::from_operator(&mix, &lat_c))
            },
            1e-9,
        );
        let a = op("1 0:y ; 0.3 1:z", &lat);
        let there = lgp_evolve(&a, &schedule, &lat).unwrap();
        let back = lgp_evolve(&there, &schedule.inverse(), &lat).unwrap();
        assert!(back.sub(&a).max_coeff() < 1e-8);
    }

    #[test]
    fn circuit_backend_matches_ode_on_swap_layer() {
        let lat = Lattice::chain(4).unwrap();
        // Constant generator i(π/2)(SWAP − 1) per pair; its traceless part
        // generates the same conjugation (the identity part is a phase).
        let swap_core = "0.5 0:x 1:x ; 0.5 0:y 1:y ; 0.5 0:z 1:z";
        let swap_core2 = "0.5 2:x 3:x ; 0.5 2:y 3:y ; 0.5 2:z 3:z";
        let gen = op(swap_core, &lat)
            .add(&op(swap_core2, &lat))
            .scale(Complex64::new(0.0, std::f64::consts::FRAC_PI_2));
        let g = Derivation::from_operator(&gen, &lat);
        let schedule = LgpSchedule::constant(g, 1e-10);

        let mut circuit = Circuit::new();
        circuit
            .push_layer(vec![
                Gate::new(vec![0, 1], circuit::swap_matrix(), &lat).unwrap(),
                Gate::new(vec![2, 3], circuit::swap_matrix(), &lat).unwrap(),
            ])
            .unwrap();

        let a = op("1 0:x ; 0.4 1:z 2:z ; 0.2 3:y", &lat);
        let via_ode = lgp_evolve(&a, &schedule, &lat).unwrap();
        let via_circuit = circuit.conjugate(&a, &lat).unwrap();
        assert!(via_ode.sub(&via_circuit).max_coeff() < 1e-9);
    }

    #[test]
    fn lr_probe_vanishes_at_t_zero_for_disjoint_supports() {
        let lat = Lattice::chain(5).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 1.5), &lat).unwrap();
        let a = op("1 0:x", &lat);
        let probes: Vec<(f64, LocalOperator)> = (1..5)
            .map(|r| (r as f64, op(&format!("1 {r}:x"), &lat)))
            .collect();
        let table = lieb_robinson_probe(&ctx, &a, &probes, &[0.0]).unwrap();
        for row in &table {
            assert!(row.norm < 1e-12, "r={} norm={}", row.r, row.norm);
        }
    }

    #[test]
    fn on_site_hamiltonian_spreads_nothing() {
        let lat = Lattice::chain(4).unwrap();
        let h = op("1 0:z ; 1.1 1:z ; 1.2 2:z ; 1.3 3:z", &lat);
        let ctx = SpectralContext::diagonalize(&h, &lat).unwrap();
        let a = op("1 0:x", &lat);
        let probes: Vec<(f64, LocalOperator)> = (1..4)
            .map(|r| (r as f64, op(&format!("1 {r}:x"), &lat)))
            .collect();
        let table = lieb_robinson_probe(&ctx, &a, &probes, &[0.5, 2.0]).unwrap();
        for row in &table {
            assert!(row.norm < 1e-12, "r={} t={} norm={}", row.r, row.t, row.norm);
        }
    }

    #[test]
    fn ising_light_cone_decays_with_distance() {
        let lat = Lattice::chain(6).unwrap();
        let ctx = SpectralContext::diagonalize(&tfim(&lat, 1.0), &lat).unwrap();
        let a = op("1 0:x", &lat);
        let probes: Vec<(f64, LocalOperator)> = (1..6)
            .map(|r| (r as f64, op(&format!("1 {r}:x"), &lat)))
            .collect();
        let table = lieb_robinson_probe(&ctx, &a, &probes, &[0.4]).unwrap();
        // Fitted slope of norm against r must be non-positive.
        let n = table.len() as f64;
        let mean_r: f64 = table.iter().map(|s| s.r).sum::<f64>() / n;
        let mean_v: f64 = table.iter().map(|s| s.norm).sum::<f64>() / n;
        let cov: f64 = table
            .iter()
            .map(|s| (s.r - mean_r) * (s.norm - mean_v))
            .sum();
        let var: f64 = table.iter().map(|s| (s.r - mean_r).powi(2)).sum();
        let slope = cov / var;
        assert!(slope <= 0.0, "slope {slope}");
        // And the CSV renderer emits one line per sample plus a header.
        let csv = lr_table_to_csv(&table);
        assert_eq!(csv.lines().count(), table.len() + 1);
        assert!(csv.starts_with("t,r,norm\n"));
    }
}
