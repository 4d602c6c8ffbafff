//! The ψ-preserving subcomplex and its contracting homotopy.
//!
//! For a gapped ground state ψ the spectral filters turn the generic
//! contracting homotopy of the Noether complex into one that stays inside
//! the ψ-preserving subcomplex: the Kitaev density `h^ψ = I_w(h)` splits the
//! Hamiltonian into state-preserving pieces, `s^ψ(f) = I_W({h^ψ, f})`
//! corrects boundaries, and `h^ψ_• = t^ψ∘h + s^ψ` is a right inverse of `∂`
//! on ψ-preserving cycles.

use num_complex::Complex64;

use crate::algebra::LocalOperator;
use crate::complex::{
    boundary_zero, graded_bracket, homotopy, homotopy_minus_one, Chain, Derivation, Graded,
};
use crate::error::{Error, Result};
use crate::geometry::SiteId;
use crate::spectral::{default_probe_basis, FilterKind, GappedBackend, GappedContext};

/// Residual allowed on `∂h^ψ = H`.
pub const KITAEV_BOUNDARY_TOL: f64 = 1e-10;
/// Excitation residual allowed for single-filter outputs.
pub const FILTER_EXCITATION_TOL: f64 = 1e-9;
/// Residual budget for composed maps (homotopy outputs, cycle inputs).
pub const COMPOSED_TOL: f64 = 1e-8;
/// Probe supports must lie within this distance of the tested operator.
pub const PROBE_REACH: f64 = 2.0;

/// Split the Hamiltonian of `ctx` into state-preserving on-site pieces:
/// `h^ψ_j = I_w(h_j)`.  Requires `∂h` to reproduce the context Hamiltonian.
pub fn kitaev_density(h: &Chain, ctx: &GappedContext) -> Result<Chain> {
    if h.degree() != 0 {
        return Err(Error::Chain("Kitaev density input must be a 0-chain".into()));
    }
    let target = ctx.hamiltonian_op()?.scale(Complex64::new(0.0, 1.0));
    let mismatch = boundary_zero(h, ctx.lattice())?
        .total()
        .sub(&target)
        .max_coeff();
    if mismatch > KITAEV_BOUNDARY_TOL {
        return Err(Error::Tolerance {
            context: "density does not split the context Hamiltonian (∂h ≠ H)".into(),
            residual: mismatch,
            tolerance: KITAEV_BOUNDARY_TOL,
        });
    }
    let mut out = Chain::new(0)?;
    for (tuple, op) in h.entries() {
        out.set(tuple, &ctx.filter(op, FilterKind::W)?)?;
    }
    Ok(out)
}

/// The ψ-preserving homotopy machine: a gapped context together with its
/// Kitaev density and the probe family used for membership tests.
pub struct StateHomotopy {
    ctx: GappedContext,
    h_psi: Chain,
    probes: Vec<LocalOperator>,
}

impl StateHomotopy {
    /// Build from a context and a density `h` with `∂h = H`; validates the
    /// Kitaev density invariants.
    pub fn new(ctx: GappedContext, h: &Chain) -> Result<Self> {
        let h_psi = kitaev_density(h, &ctx)?;
        let target = ctx.hamiltonian_op()?.scale(Complex64::new(0.0, 1.0));
        let mismatch = boundary_zero(&h_psi, ctx.lattice())?
            .total()
            .sub(&target)
            .max_coeff();
        if mismatch > KITAEV_BOUNDARY_TOL {
            return Err(Error::Tolerance {
                context: "filtered density no longer splits H".into(),
                residual: mismatch,
                tolerance: KITAEV_BOUNDARY_TOL,
            });
        }
        let probes = default_probe_basis(ctx.lattice(), PROBE_REACH);
        let sh = StateHomotopy { ctx, h_psi, probes };
        for (tuple, op) in sh.h_psi.entries() {
            let residual = sh.excitation_residual(op)?;
            if residual > FILTER_EXCITATION_TOL {
                return Err(Error::Tolerance {
                    context: format!("Kitaev density component {tuple:?} excites ψ"),
                    residual,
                    tolerance: FILTER_EXCITATION_TOL,
                });
            }
        }
        Ok(sh)
    }

    pub fn context(&self) -> &GappedContext {
        &self.ctx
    }

    pub fn kitaev_density(&self) -> &Chain {
        &self.h_psi
    }

    pub fn probes(&self) -> &[LocalOperator] {
        &self.probes
    }

    /// Probes whose every site lies within [`PROBE_REACH`] of the
    /// operator's support (all probes for scalar operators).
    fn probes_near(&self, op: &LocalOperator) -> Vec<LocalOperator> {
        let support: Vec<SiteId> = op.support().into_iter().collect();
        if support.is_empty() {
            return Vec::new();
        }
        let lat = self.ctx.lattice();
        let near = |site: SiteId| {
            support.iter().any(|&s| {
                let d2: f64 = lat
                    .position(site)
                    .iter()
                    .zip(lat.position(s))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() <= PROBE_REACH + 1e-12
            })
        };
        self.probes
            .iter()
            .filter(|p| p.support().into_iter().all(near))
            .cloned()
            .collect()
    }

    /// `max_B |⟨[A, B]⟩_ψ|` over the default probes near `A`.
    pub fn excitation_residual(&self, op: &LocalOperator) -> Result<f64> {
        let probes = self.probes_near(op);
        self.ctx.does_not_excite(op, &probes)
    }

    /// Excitation residual of a chain (worst component) or a derivation
    /// (its total — only the summed action must preserve ψ).
    pub fn graded_excitation(&self, a: &Graded) -> Result<f64> {
        match a {
            Graded::Chain(c) => {
                let mut worst = 0.0f64;
                for (_, op) in c.entries() {
                    worst = worst.max(self.excitation_residual(op)?);
                }
                Ok(worst)
            }
            Graded::Derivation(f) => self.excitation_residual(&f.total()),
        }
    }

    /// The chain map `t^ψ = I_w` applied componentwise.
    pub fn t_psi(&self, a: &Graded) -> Result<Graded> {
        self.map_components(a, FilterKind::W)
    }

    /// The chain map `I^ψ = I_W` applied componentwise.
    pub fn i_psi(&self, a: &Graded) -> Result<Graded> {
        self.map_components(a, FilterKind::WInt)
    }

    fn map_components(&self, a: &Graded, kind: FilterKind) -> Result<Graded> {
        match a {
            Graded::Chain(c) => {
                let mut out = Chain::new(c.degree())?;
                for (tuple, op) in c.entries() {
                    out.set(tuple, &self.ctx.filter(op, kind)?)?;
                }
                Ok(Graded::Chain(out))
            }
            Graded::Derivation(f) => {
                let filtered = self.ctx.filter(&f.total(), kind)?;
                Ok(Graded::Derivation(Derivation::from_operator(
                    &filtered,
                    self.ctx.lattice(),
                )))
            }
        }
    }

    /// `s^ψ(f) = I^ψ({h^ψ, f})`: raises degree by one and keeps
    /// ψ-preserving inputs ψ-preserving.
    pub fn s_psi(&self, a: &Graded) -> Result<Graded> {
        let bracket = graded_bracket(
            &Graded::Chain(self.h_psi.clone()),
            a,
            self.ctx.lattice(),
        )?;
        self.i_psi(&bracket)
    }

    /// Boundary and excitation residuals of `a`: both small certifies a
    /// ψ-preserving cycle.
    pub fn cycle_check(&self, a: &Graded) -> Result<(f64, f64)> {
        let boundary_residual = a.boundary(self.ctx.lattice())?.max_coeff();
        let excitation_residual = self.graded_excitation(a)?;
        Ok((boundary_residual, excitation_residual))
    }

    /// The ψ-preserving contracting homotopy `h^ψ_• = t^ψ∘h + s^ψ`: returns
    /// a chain one degree above `a` with `∂(result) = a`, every component
    /// ψ-preserving.  `a` must be a ψ-preserving cycle.
    pub fn psi_homotopy(&self, a: &Graded) -> Result<Chain> {
        self.psi_homotopy_with_tolerance(a, COMPOSED_TOL)
    }

    /// [`Self::psi_homotopy`] with a caller-chosen residual budget, used by
    /// discretized inputs whose cycle defect scales with a mesh width.
    pub fn psi_homotopy_with_tolerance(&self, a: &Graded, tol: f64) -> Result<Chain> {
        let (bres, eres) = self.cycle_check(a)?;
        if bres > tol {
            return Err(Error::Tolerance {
                context: "ψ-homotopy input is not a cycle".into(),
                residual: bres,
                tolerance: tol,
            });
        }
        if eres > tol {
            return Err(Error::Tolerance {
                context: "ψ-homotopy input excites the state".into(),
                residual: eres,
                tolerance: tol,
            });
        }
        let lat = self.ctx.lattice();
        let b = match a {
            Graded::Chain(c) => homotopy(c, lat)?,
            Graded::Derivation(f) => homotopy_minus_one(f, lat)?,
        };
        let tb = match self.t_psi(&Graded::Chain(b))? {
            Graded::Chain(c) => c,
            Graded::Derivation(_) => unreachable!("t_psi preserves the variant"),
        };
        let result = match self.s_psi(a)? {
            Graded::Chain(s) => tb.add_chain(&s)?,
            Graded::Derivation(_) => unreachable!("s_psi raises degree to a chain"),
        };
        // Post-conditions: right inverse of ∂, and ψ-preserving output.
        let back = Graded::Chain(result.clone()).boundary(lat)?;
        let inverse_residual = back.sub_graded(a)?.max_coeff();
        if inverse_residual > tol {
            return Err(Error::Tolerance {
                context: "ψ-homotopy failed to invert the boundary".into(),
                residual: inverse_residual,
                tolerance: tol,
            });
        }
        let out_excitation = self.graded_excitation(&Graded::Chain(result.clone()))?;
        if out_excitation > tol {
            return Err(Error::Tolerance {
                context: "ψ-homotopy output excites the state".into(),
                residual: out_excitation,
                tolerance: tol,
            });
        }
        Ok(result)
    }
}
