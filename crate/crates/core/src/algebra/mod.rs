//! Sparse operator algebra over tensor-product site bases.
//!
//! A [`LocalOperator`] is a finite linear combination of basis strings
//! (tensor products of on-site basis elements, identity elsewhere) with
//! complex coefficients.  The tracial state `<.>_inf` is the coefficient of
//! the empty string; conditional expectations delete strings whose support
//! leaks out of the conditioning region; brick components are computed by
//! Möbius inversion over the brick poset.  A dense Kronecker-product backend
//! serves as the in-crate oracle and as the workhorse for spectral analysis.

pub mod dense;
pub mod site_basis;
pub mod text;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{mobius_support, Brick, Lattice, SiteId};

pub use dense::{expand_dense, DenseRealization, DENSE_CAP_DEFAULT};

/// Coefficients with modulus below this threshold are dropped after
/// products and basis transforms.
pub const DEFAULT_PRUNE: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Basis strings
// ---------------------------------------------------------------------------

/// A tensor product of non-identity on-site basis elements over a finite
/// set of sites, sorted by site id.  The empty string is the identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BasisString {
    factors: Vec<(SiteId, usize)>,
}

impl BasisString {
    /// The identity string.
    pub fn identity() -> Self {
        BasisString::default()
    }

    /// Build from `(site, basis index)` factors; indices must be non-zero
    /// and sites distinct.
    pub fn new(mut factors: Vec<(SiteId, usize)>) -> Result<Self> {
        factors.sort_by_key(|&(site, _)| site);
        for w in factors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Operator(format!(
                    "duplicate site {} in basis string",
                    w[0].0
                )));
            }
        }
        if factors.iter().any(|&(_, op)| op == 0) {
            return Err(Error::Operator(
                "identity factors are implicit; basis index 0 not allowed".into(),
            ));
        }
        Ok(BasisString { factors })
    }

    pub fn factors(&self) -> &[(SiteId, usize)] {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.factors.iter().map(|&(site, _)| site)
    }

    /// Is the support contained in the given sorted site set?
    pub fn supported_in(&self, sites: &BTreeSet<SiteId>) -> bool {
        self.factors.iter().all(|(site, _)| sites.contains(site))
    }
}

// ---------------------------------------------------------------------------
// Local operators
// ---------------------------------------------------------------------------

/// A sparse operator: a finite complex combination of basis strings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalOperator {
    terms: BTreeMap<BasisString, Complex64>,
}

impl LocalOperator {
    pub fn zero() -> Self {
        LocalOperator::default()
    }

    pub fn identity() -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(BasisString::identity(), Complex64::new(1.0, 0.0));
        LocalOperator { terms }
    }

    pub fn from_term(string: BasisString, coeff: Complex64) -> Self {
        let mut op = LocalOperator::zero();
        op.add_term(string, coeff);
        op
    }

    /// Convenience constructor: `coeff * prod_j E_{op_j}(site_j)`.
    pub fn string(factors: &[(SiteId, usize)], coeff: Complex64) -> Result<Self> {
        Ok(LocalOperator::from_term(
            BasisString::new(factors.to_vec())?,
            coeff,
        ))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BasisString, &Complex64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, string: &BasisString) -> Complex64 {
        self.terms
            .get(string)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Add `coeff` to the coefficient of `string`, dropping exact zeros so
    /// reconstruction identities are exact, not merely small.
    pub fn add_term(&mut self, string: BasisString, coeff: Complex64) {
        if coeff.re == 0.0 && coeff.im == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(string) {
            Entry::Vacant(slot) => {
                slot.insert(coeff);
            }
            Entry::Occupied(mut slot) => {
                let sum = *slot.get() + coeff;
                if sum.re == 0.0 && sum.im == 0.0 {
                    slot.remove();
                } else {
                    *slot.get_mut() = sum;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &LocalOperator) {
        for (s, c) in other.terms() {
            self.add_term(s.clone(), *c);
        }
    }

    pub fn add(&self, other: &LocalOperator) -> LocalOperator {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &LocalOperator) -> LocalOperator {
        let mut out = self.clone();
        for (s, c) in other.terms() {
            out.add_term(s.clone(), -*c);
        }
        out
    }

    pub fn scale(&self, factor: Complex64) -> LocalOperator {
        if factor.re == 0.0 && factor.im == 0.0 {
            return LocalOperator::zero();
        }
        LocalOperator {
            terms: self
                .terms
                .iter()
                .map(|(s, c)| (s.clone(), c * factor))
                .collect(),
        }
    }

    pub fn neg(&self) -> LocalOperator {
        self.scale(Complex64::new(-1.0, 0.0))
    }

    /// Drop coefficients with modulus at most `threshold`.
    pub fn pruned(&self, threshold: f64) -> LocalOperator {
        LocalOperator {
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.norm() > threshold)
                .map(|(s, c)| (s.clone(), *c))
                .collect(),
        }
    }

    /// Union of the string supports.
    pub fn support(&self) -> BTreeSet<SiteId> {
        let mut out = BTreeSet::new();
        for s in self.terms.keys() {
            out.extend(s.support());
        }
        out
    }

    /// The tracial state: the coefficient of the empty string.
    pub fn trace_state(&self) -> Complex64 {
        self.coeff(&BasisString::identity())
    }

    /// The adjoint; basis strings are Hermitian, so this conjugates
    /// coefficients.
    pub fn adjoint(&self) -> LocalOperator {
        LocalOperator {
            terms: self.terms.iter().map(|(s, c)| (s.clone(), c.conj())).collect(),
        }
    }

    /// Largest deviation from anti-self-adjointness (`A* = -A`); zero for
    /// purely imaginary coefficients.
    pub fn anti_self_adjoint_defect(&self) -> f64 {
        self.terms.values().fold(0.0f64, |acc, c| acc.max(c.re.abs()))
    }

    pub fn is_anti_self_adjoint(&self, tol: f64) -> bool {
        self.anti_self_adjoint_defect() <= tol
    }

    pub fn is_traceless(&self, tol: f64) -> bool {
        self.trace_state().norm() <= tol
    }

    /// Largest deviation from self-adjointness.
    pub fn self_adjoint_defect(&self) -> f64 {
        self.terms.values().fold(0.0f64, |acc, c| acc.max(c.im.abs()))
    }

    /// Sum of coefficient moduli times basis-element norms: an upper bound
    /// for the operator norm (equality for single strings).
    pub fn norm_upper(&self, lattice: &Lattice) -> f64 {
        self.terms
            .iter()
            .map(|(s, c)| {
                let factor: f64 = s
                    .factors()
                    .iter()
                    .map(|&(site, op)| {
                        site_basis::site_algebra(lattice.onsite_dim(site)).op_norm(op)
                    })
                    .product();
                c.norm() * factor
            })
            .sum()
    }

    /// Exact operator norm via the dense backend (largest singular value).
    pub fn norm_exact(&self, lattice: &Lattice) -> Result<f64> {
        self.norm_exact_capped(lattice, DENSE_CAP_DEFAULT)
    }

    pub fn norm_exact_capped(&self, lattice: &Lattice, cap: usize) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let sites: Vec<SiteId> = self.support().into_iter().collect();
        let dense = DenseRealization::assemble(self, lattice, &sites, cap)?;
        Ok(dense.operator_norm())
    }

    /// Frobenius-style norm in the tracial inner product:
    /// `sqrt(<A* A>_inf) = sqrt(sum |c|^2)`.
    pub fn norm_tracial(&self) -> f64 {
        self.terms
            .values()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    // -- conditional expectations and brick components ----------------------

    /// Conditional expectation onto the sites `region`: deletes every string
    /// whose support is not contained in `region`.  Exact for tensor-product
    /// conditional expectations in the tracial state.
    pub fn conditional_expectation(&self, region: &BTreeSet<SiteId>) -> LocalOperator {
        LocalOperator {
            terms: self
                .terms
                .iter()
                .filter(|(s, _)| s.supported_in(region))
                .map(|(s, c)| (s.clone(), *c))
                .collect(),
        }
    }

    /// Restriction to a brick: conditional expectation onto the sites inside
    /// it.  The empty brick restricts to `<A>_inf * 1`.
    pub fn restrict_to_brick(&self, brick: &Brick, lattice: &Lattice) -> LocalOperator {
        match brick {
            Brick::Empty => {
                let tr = self.trace_state();
                if tr.re == 0.0 && tr.im == 0.0 {
                    LocalOperator::zero()
                } else {
                    LocalOperator::identity().scale(tr)
                }
            }
            _ => {
                let sites: BTreeSet<SiteId> =
                    lattice.sites_in_brick(brick).into_iter().collect();
                self.conditional_expectation(&sites)
            }
        }
    }

    /// The brick component `A^Y = sum_{Y' <= Y} mu(Y', Y) A|_{Y'}` by Möbius
    /// inversion over the (at most `4^d`) sub-bricks with non-zero
    /// coefficient.
    pub fn brick_component(&self, brick: &Brick, lattice: &Lattice) -> LocalOperator {
        let mut out = LocalOperator::zero();
        for (sub, mu) in mobius_support(brick) {
            let restricted = self.restrict_to_brick(&sub, lattice);
            for (s, c) in restricted.terms() {
                out.add_term(s.clone(), c * mu as f64);
            }
        }
        out
    }

    /// Full brick decomposition, grouping strings by the minimal brick of
    /// their support.  The scalar part (if any) is keyed by the empty brick.
    /// This is the fast dual route to [`Self::brick_component`]; the two are
    /// cross-checked in tests.
    pub fn brick_decomposition(&self, lattice: &Lattice) -> BTreeMap<Brick, LocalOperator> {
        let mut out: BTreeMap<Brick, LocalOperator> = BTreeMap::new();
        for (s, c) in self.terms() {
            let brick = if s.is_identity() {
                Brick::Empty
            } else {
                let sites: Vec<SiteId> = s.support().collect();
                lattice
                    .minimal_brick(&sites)
                    .expect("non-empty support has a minimal brick")
            };
            out.entry(brick)
                .or_insert_with(LocalOperator::zero)
                .add_term(s.clone(), *c);
        }
        out.retain(|_, op| !op.is_zero());
        out
    }

    // -- products -----------------------------------------------------------

    /// Operator product, expanding overlapping on-site factors through the
    /// cached structure constants.  Coefficients below [`DEFAULT_PRUNE`] are
    /// dropped.
    pub fn mul(&self, other: &LocalOperator, lattice: &Lattice) -> LocalOperator {
        let mut out = LocalOperator::zero();
        for (s1, c1) in self.terms() {
            for (s2, c2) in other.terms() {
                accumulate_string_product(&mut out, s1, s2, c1 * c2, lattice);
            }
        }
        out.pruned(DEFAULT_PRUNE)
    }

    /// Commutator `[A, B] = AB - BA`.
    pub fn commutator(&self, other: &LocalOperator, lattice: &Lattice) -> LocalOperator {
        self.mul(other, lattice).sub(&other.mul(self, lattice))
    }

    /// Anticommutator `{A, B} = AB + BA`.
    pub fn anticommutator(&self, other: &LocalOperator, lattice: &Lattice) -> LocalOperator {
        self.mul(other, lattice).add(&other.mul(self, lattice))
    }

    // -- conjugation --------------------------------------------------------

    /// Conjugate by a unitary `U` supported on `gate_sites` (given in sorted
    /// order with row-major tensor indexing): `A -> U A U*`.  Strings are
    /// split into their on-gate and off-gate parts; the on-gate part is
    /// conjugated densely and re-expanded.
    pub fn conjugated_on(
        &self,
        gate_sites: &[SiteId],
        u: &DMatrix<Complex64>,
        lattice: &Lattice,
    ) -> Result<LocalOperator> {
        let dims: Vec<usize> = gate_sites.iter().map(|&j| lattice.onsite_dim(j)).collect();
        let gate_dim: usize = dims.iter().product();
        if u.nrows() != gate_dim || u.ncols() != gate_dim {
            return Err(Error::Operator(format!(
                "gate matrix is {}x{}, expected {gate_dim}x{gate_dim}",
                u.nrows(),
                u.ncols()
            )));
        }
        let gate_set: BTreeSet<SiteId> = gate_sites.iter().copied().collect();
        let mut out = LocalOperator::zero();
        for (s, c) in self.terms() {
            let (inside, outside): (Vec<_>, Vec<_>) = s
                .factors()
                .iter()
                .partition(|(site, _)| gate_set.contains(site));
            if inside.is_empty() {
                // Disjoint support: conjugation acts trivially.
                out.add_term(s.clone(), *c);
                continue;
            }
            // Dense on-gate factor.
            let mut m = DMatrix::<Complex64>::identity(1, 1);
            for (&site, &dim) in gate_sites.iter().zip(&dims) {
                let alg = site_basis::site_algebra(dim);
                let factor = inside
                    .iter()
                    .find(|(s2, _)| *s2 == site)
                    .map(|&(_, op)| alg.matrix(op).clone())
                    .unwrap_or_else(|| DMatrix::identity(dim, dim));
                m = m.kronecker(&factor);
            }
            let conj = u * m * u.adjoint();
            // Re-expand over the gate sites.
            let expansion = dense::expand_dense(&conj, gate_sites, &dims);
            for (factors, coeff) in expansion {
                if coeff.norm() <= DEFAULT_PRUNE {
                    continue;
                }
                let mut all = outside.clone();
                all.extend(factors);
                let string = BasisString::new(all).expect("disjoint site sets");
                out.add_term(string, c * coeff);
            }
        }
        Ok(out.pruned(DEFAULT_PRUNE))
    }

    /// Largest coefficient modulus (0 for the zero operator).
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0f64, |acc, c| acc.max(c.norm()))
    }
}

/// Accumulate `coeff * (s1 . s2)` into `out`, expanding overlapping sites.
fn accumulate_string_product(
    out: &mut LocalOperator,
    s1: &BasisString,
    s2: &BasisString,
    coeff: Complex64,
    lattice: &Lattice,
) {
    // Merge the two sorted factor lists; sites present in both expand via
    // the structure constants into a list of alternatives.
    let mut fixed: Vec<(SiteId, usize)> = Vec::new();
    let mut branches: Vec<(SiteId, Vec<(usize, Complex64)>)> = Vec::new();
    let (a, b) = (s1.factors(), s2.factors());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
            fixed.push(a[i]);
            i += 1;
        } else if i >= a.len() || b[j].0 < a[i].0 {
            fixed.push(b[j]);
            j += 1;
        } else {
            let site = a[i].0;
            let alg = site_basis::site_algebra(lattice.onsite_dim(site));
            branches.push((site, alg.product(a[i].1, b[j].1).to_vec()));
            i += 1;
            j += 1;
        }
    }
    // Cartesian product over the branch alternatives.
    let mut partial: Vec<(Vec<(SiteId, usize)>, Complex64)> = vec![(Vec::new(), coeff)];
    for (site, alternatives) in &branches {
        let mut next = Vec::with_capacity(partial.len() * alternatives.len());
        for (factors, c) in &partial {
            for &(opix, f) in alternatives {
                let mut nf = factors.clone();
                if opix != 0 {
                    nf.push((*site, opix));
                }
                next.push((nf, c * f));
            }
        }
        partial = next;
    }
    for (extra, c) in partial {
        let mut factors = fixed.clone();
        factors.extend(extra);
        let string = BasisString::new(factors).expect("merged factor lists have distinct sites");
        out.add_term(string, c);
    }
}
