//! The uniformly local Noether complex.
//!
//! Degree-`q` chains are skew-symmetric assignments of traceless
//! anti-self-adjoint local operators to `(q+1)`-tuples of sites.  The
//! boundary sums over the first index; in degree zero it lands in the space
//! of derivations, stored brick by brick.  A contracting homotopy `h` built
//! from brick characteristic weights makes the augmented complex exact at
//! finite size: `h∂ + ∂h = id` in every degree and `∂₀∘h₋₁ = id`.  The
//! complex carries a 1-shifted graded Lie bracket (chains in degree `q`
//! sit in shifted degree `q`, derivations in degree `−1`) whose degree-zero
//! shadow is the derived bracket `[f,g} = {∂f, g}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::algebra::text::{format_operator_inline, parse_operator};
use crate::algebra::LocalOperator;
use crate::error::{Error, Result};
use crate::geometry::{Brick, ConicalPartition, Lattice, SiteId};

/// Largest chain degree kept representable: descent in `d ≤ 2` needs degree
/// `d+1`, plus one more for Stokes checks.
pub const MAX_DEGREE: usize = 4;

/// Sort a tuple ascending and report the permutation sign; `None` when an
/// index repeats.
fn canonicalize(tuple: &[SiteId]) -> Option<(Vec<SiteId>, f64)> {
    let mut sorted: Vec<SiteId> = tuple.to_vec();
    let mut sign = 1.0f64;
    // Insertion sort with sign tracking; tuples are tiny.
    for i in 1..sorted.len() {
        let mut k = i;
        while k > 0 && sorted[k] < sorted[k - 1] {
            sorted.swap(k, k - 1);
            sign = -sign;
            k -= 1;
        }
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((sorted, sign))
}

/// A degree-`q` chain: a skew-symmetric map from `(q+1)`-tuples of sites to
/// local operators, stored on strictly ascending canonical tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    degree: usize,
    entries: BTreeMap<Vec<SiteId>, LocalOperator>,
}

impl Chain {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Chain(format!(
                "chain degree {degree} exceeds the supported cap {MAX_DEGREE}"
            )));
        }
        Ok(Chain {
            degree,
            entries: BTreeMap::new(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// Canonical (ascending-tuple) entries.
    pub fn entries(&self) -> impl Iterator<Item = (&Vec<SiteId>, &LocalOperator)> {
        self.entries.iter()
    }

    fn check_len(&self, tuple: &[SiteId]) -> Result<()> {
        if tuple.len() != self.degree + 1 {
            return Err(Error::Chain(format!(
                "tuple length {} does not match degree {} (+1)",
                tuple.len(),
                self.degree
            )));
        }
        Ok(())
    }

    /// Add `op` to the component at `tuple` (any index order; skew-symmetry
    /// is applied).  A repeated index is rejected.
    pub fn add(&mut self, tuple: &[SiteId], op: &LocalOperator) -> Result<()> {
        self.check_len(tuple)?;
        let (canonical, sign) = canonicalize(tuple)
            .ok_or_else(|| Error::Chain(format!("repeated site index in tuple {tuple:?}")))?;
        let signed = op.scale(Complex64::new(sign, 0.0));
        match self.entries.get_mut(&canonical) {
            Some(existing) => {
                existing.add_assign(&signed);
                if existing.is_zero() {
                    self.entries.remove(&canonical);
                }
            }
            None => {
                if !signed.is_zero() {
                    self.entries.insert(canonical, signed);
                }
            }
        }
        Ok(())
    }

    /// Replace the component at `tuple` (any index order).
    pub fn set(&mut self, tuple: &[SiteId], op: &LocalOperator) -> Result<()> {
        self.check_len(tuple)?;
        let (canonical, sign) = canonicalize(tuple)
            .ok_or_else(|| Error::Chain(format!("repeated site index in tuple {tuple:?}")))?;
        let signed = op.scale(Complex64::new(sign, 0.0));
        if signed.is_zero() {
            self.entries.remove(&canonical);
        } else {
            self.entries.insert(canonical, signed);
        }
        Ok(())
    }

    /// Component at `tuple` in the given index order; zero for repeated
    /// indices or absent tuples.
    pub fn get(&self, tuple: &[SiteId]) -> LocalOperator {
        let Some((canonical, sign)) = canonicalize(tuple) else {
            return LocalOperator::zero();
        };
        match self.entries.get(&canonical) {
            Some(op) => op.scale(Complex64::new(sign, 0.0)),
            None => LocalOperator::zero(),
        }
    }

    pub fn scale(&self, factor: Complex64) -> Chain {
        let mut out = Chain {
            degree: self.degree,
            entries: BTreeMap::new(),
        };
        for (tuple, op) in &self.entries {
            let scaled = op.scale(factor);
            if !scaled.is_zero() {
                out.entries.insert(tuple.clone(), scaled);
            }
        }
        out
    }

    pub fn add_chain(&self, other: &Chain) -> Result<Chain> {
        if self.degree != other.degree {
            return Err(Error::Chain(format!(
                "degree mismatch {} vs {}",
                self.degree, other.degree
            )));
        }
        let mut out = self.clone();
        for (tuple, op) in &other.entries {
            out.add(tuple, op)?;
        }
        Ok(out)
    }

    pub fn sub_chain(&self, other: &Chain) -> Result<Chain> {
        self.add_chain(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Largest coefficient modulus across all entries: the residual metric
    /// used by the identity checks (coefficients are coordinates in the
    /// tracially orthonormal string basis).
    pub fn max_coeff(&self) -> f64 {
        self.entries
            .values()
            .map(LocalOperator::max_coeff)
            .fold(0.0, f64::max)
    }

    /// Worst anti-self-adjointness defect across entries.
    pub fn asa_defect(&self) -> f64 {
        self.entries
            .values()
            .map(LocalOperator::anti_self_adjoint_defect)
            .fold(0.0, f64::max)
    }

    /// Worst trace component across entries.
    pub fn traceless_defect(&self) -> f64 {
        self.entries
            .values()
            .map(|op| op.trace_state().norm())
            .fold(0.0, f64::max)
    }

    /// Serialize as lines `j0 j1 ... jq | operator-text`.
    pub fn to_text(&self, lattice: &Lattice) -> String {
        let mut out = String::new();
        for (tuple, op) in &self.entries {
            let ids: Vec<String> = tuple.iter().map(|j| j.to_string()).collect();
            let _ = writeln!(out, "{} | {}", ids.join(" "), format_operator_inline(op, lattice));
        }
        out
    }

    /// Parse the `to_text` format; every line must carry `degree + 1` ids.
    pub fn parse(text: &str, degree: usize, lattice: &Lattice) -> Result<Chain> {
        let mut chain = Chain::new(degree)?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ids_text, op_text) = line
                .split_once('|')
                .ok_or_else(|| Error::Parse(format!("chain line without `|`: {line}")))?;
            let tuple: Vec<SiteId> = ids_text
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad site id `{t}`: {e}")))
                })
                .collect::<Result<_>>()?;
            let op = parse_operator(op_text, lattice)?;
            chain.add(&tuple, &op)?;
        }
        Ok(chain)
    }
}

/// A uniformly local derivation: brick-primitive components `F^Y` on
/// non-empty bricks.  At finite size it is always summable, and its action
/// is commutation with the total operator `Σ_Y F^Y`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Derivation {
    components: BTreeMap<Brick, LocalOperator>,
}

impl Derivation {
    pub fn zero() -> Self {
        Derivation::default()
    }

    /// Build from a local operator by brick decomposition.  The scalar part
    /// is dropped: derivations are traceless.
    pub fn from_operator(op: &LocalOperator, lattice: &Lattice) -> Self {
        let mut components = BTreeMap::new();
        for (brick, component) in op.brick_decomposition(lattice) {
            if matches!(brick, Brick::Box { .. }) && !component.is_zero() {
                components.insert(brick, component);
            }
        }
        Derivation { components }
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> impl Iterator<Item = (&Brick, &LocalOperator)> {
        self.components.iter()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, brick: &Brick) -> LocalOperator {
        self.components.get(brick).cloned().unwrap_or_default()
    }

    pub fn add_component(&mut self, brick: Brick, op: &LocalOperator) -> Result<()> {
        if matches!(brick, Brick::Empty) {
            return Err(Error::Chain("derivation component on the empty brick".into()));
        }
        match self.components.get_mut(&brick) {
            Some(existing) => {
                existing.add_assign(op);
                if existing.is_zero() {
                    self.components.remove(&brick);
                }
            }
            None => {
                if !op.is_zero() {
                    self.components.insert(brick, op.clone());
                }
            }
        }
        Ok(())
    }

    pub fn add_derivation(&self, other: &Derivation) -> Derivation {
        let mut out = self.clone();
        for (brick, op) in &other.components {
            let _ = out.add_component(brick.clone(), op);
        }
        out
    }

    pub fn sub_derivation(&self, other: &Derivation) -> Derivation {
        self.add_derivation(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, factor: Complex64) -> Derivation {
        let mut components = BTreeMap::new();
        for (brick, op) in &self.components {
            let scaled = op.scale(factor);
            if !scaled.is_zero() {
                components.insert(brick.clone(), scaled);
            }
        }
        Derivation { components }
    }

    /// Total operator `Σ_Y F^Y` of a summable derivation.
    pub fn total(&self) -> LocalOperator {
        let mut out = LocalOperator::zero();
        for op in self.components.values() {
            out.add_assign(op);
        }
        out
    }

    /// Derivation action `F(A) = Σ_Y [F^Y, A]`.
    pub fn apply(&self, a: &LocalOperator, lattice: &Lattice) -> LocalOperator {
        self.total().commutator(a, lattice)
    }

    pub fn max_coeff(&self) -> f64 {
        self.components
            .values()
            .map(LocalOperator::max_coeff)
            .fold(0.0, f64::max)
    }

    /// Worst deviation of a stored component from brick-primitivity: strings
    /// whose minimal brick is not the component's brick.
    pub fn primitivity_defect(&self, lattice: &Lattice) -> f64 {
        let mut worst = 0.0f64;
        for (brick, op) in &self.components {
            for (string, coeff) in op.terms() {
                let support: Vec<SiteId> = string.support().collect();
                match lattice.minimal_brick(&support) {
                    Ok(minimal) if &minimal == brick => {}
                    _ => worst = worst.max(coeff.norm()),
                }
            }
        }
        worst
    }

    /// Serialize as lines `brick | operator-text`.
    pub fn to_text(&self, lattice: &Lattice) -> String {
        let mut out = String::new();
        for (brick, op) in &self.components {
            let _ = writeln!(out, "{brick} | {}", format_operator_inline(op, lattice));
        }
        out
    }

    pub fn parse(text: &str, lattice: &Lattice) -> Result<Derivation> {
        let mut out = Derivation::zero();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (brick_text, op_text) = line
                .split_once('|')
                .ok_or_else(|| Error::Parse(format!("derivation line without `|`: {line}")))?;
            let brick: Brick = brick_text.trim().parse()?;
            let op = parse_operator(op_text, lattice)?;
            out.add_component(brick, &op)?;
        }
        Ok(out)
    }
}

// -- boundary and homotopy ---------------------------------------------------

/// Boundary of a chain of degree `q ≥ 1`:
/// `(∂a)_{j_1…j_q} = Σ_{j_0} a_{j_0 j_1…j_q}`.
pub fn boundary(a: &Chain) -> Result<Chain> {
    if a.degree == 0 {
        return Err(Error::Chain(
            "boundary of a 0-chain is a derivation; use boundary_zero".into(),
        ));
    }
    let mut out = Chain::new(a.degree - 1)?;
    for (tuple, op) in &a.entries {
        for p in 0..tuple.len() {
            let mut rest = tuple.clone();
            rest.remove(p);
            let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
            out.add(&rest, &op.scale(Complex64::new(sign, 0.0)))?;
        }
    }
    Ok(out)
}

/// Augmentation boundary `∂₀`: a 0-chain becomes the derivation with
/// components `(∂₀a)^Y = Σ_j (a_j)^Y`.
pub fn boundary_zero(a: &Chain, lattice: &Lattice) -> Result<Derivation> {
    if a.degree != 0 {
        return Err(Error::Chain(format!(
            "boundary_zero expects a 0-chain, got degree {}",
            a.degree
        )));
    }
    let mut total = LocalOperator::zero();
    for op in a.entries.values() {
        total.add_assign(op);
    }
    Ok(Derivation::from_operator(&total, lattice))
}

/// Shared weight lookup: `χ_Y(j)/|Y∩Λ|` for the brick components of an
/// operator, with the site count validated to be positive.
fn brick_weights(
    op: &LocalOperator,
    lattice: &Lattice,
) -> Result<Vec<(Brick, LocalOperator, f64)>> {
    let mut out = Vec::new();
    for (brick, component) in op.brick_decomposition(lattice) {
        if matches!(brick, Brick::Empty) {
            continue; // traceless flag checks catch genuine scalar parts
        }
        let count = lattice.sites_in_brick(&brick).len();
        if count == 0 {
            return Err(Error::Chain(format!(
                "brick {brick} contains no lattice sites; homotopy undefined \
                 (non-covering lattice)"
            )));
        }
        out.push((brick, component, 1.0 / count as f64));
    }
    Ok(out)
}

/// Contracting homotopy `h_q` of Eq.-style brick characteristic weights:
///
/// `h(a)_{j_0…j_{q+1}} = Σ_Y Σ_k (−1)^k χ_Y(j_k)/|Y∩Λ| · (a_{j_0…ĵ_k…})^Y`.
///
/// Together with the boundary it satisfies `h∂ + ∂h = id` for `q ≥ 0`.
pub fn homotopy(a: &Chain, lattice: &Lattice) -> Result<Chain> {
    let mut out = Chain::new(a.degree + 1)?;

    // Per-entry brick decompositions, computed once.
    let mut decomposed: BTreeMap<&Vec<SiteId>, Vec<(Brick, LocalOperator, f64)>> = BTreeMap::new();
    for (tuple, op) in &a.entries {
        decomposed.insert(tuple, brick_weights(op, lattice)?);
    }

    // Candidate output tuples: insert one extra site into an existing tuple.
    let mut candidates: BTreeSet<Vec<SiteId>> = BTreeSet::new();
    for tuple in a.entries.keys() {
        for s in 0..lattice.len() {
            if tuple.binary_search(&s).is_err() {
                let mut extended = tuple.clone();
                let pos = extended.partition_point(|&t| t < s);
                extended.insert(pos, s);
                candidates.insert(extended);
            }
        }
    }

    for tuple in candidates {
        let mut value = LocalOperator::zero();
        for (k, &site) in tuple.iter().enumerate() {
            let mut rest = tuple.clone();
            rest.remove(k);
            let Some(weights) = decomposed.get(&rest) else {
                continue;
            };
            let point = lattice.position(site);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for (brick, component, inv_count) in weights {
                if brick.contains_point(point) {
                    value.add_assign(&component.scale(Complex64::new(sign * inv_count, 0.0)));
                }
            }
        }
        if !value.is_zero() {
            out.set(&tuple, &value)?;
        }
    }
    Ok(out)
}

/// Augmentation homotopy `h₋₁`: spreads each brick component uniformly over
/// the sites of its brick, `h₋₁(F)_j = Σ_Y χ_Y(j)/|Y∩Λ| · F^Y`.  Satisfies
/// `∂₀∘h₋₁ = id`.
pub fn homotopy_minus_one(f: &Derivation, lattice: &Lattice) -> Result<Chain> {
    let mut out = Chain::new(0)?;
    for (brick, component) in &f.components {
        let sites = lattice.sites_in_brick(brick);
        if sites.is_empty() {
            return Err(Error::Chain(format!(
                "brick {brick} contains no lattice sites; homotopy undefined \
                 (non-covering lattice)"
            )));
        }
        let weight = Complex64::new(1.0 / sites.len() as f64, 0.0);
        for j in sites {
            out.add(&[j], &component.scale(weight))?;
        }
    }
    Ok(out)
}

// -- graded bracket ----------------------------------------------------------

/// A graded element of the augmented complex: a chain in shifted degree
/// `q ≥ 0` or a derivation in degree `−1`.
#[derive(Debug, Clone)]
pub enum Graded {
    Chain(Chain),
    Derivation(Derivation),
}

impl Graded {
    /// Shifted degree: chains keep their degree, derivations sit at `−1`.
    pub fn degree(&self) -> i64 {
        match self {
            Graded::Chain(c) => c.degree() as i64,
            Graded::Derivation(_) => -1,
        }
    }

    pub fn max_coeff(&self) -> f64 {
        match self {
            Graded::Chain(c) => c.max_coeff(),
            Graded::Derivation(f) => f.max_coeff(),
        }
    }

    pub fn scale(&self, factor: Complex64) -> Graded {
        match self {
            Graded::Chain(c) => Graded::Chain(c.scale(factor)),
            Graded::Derivation(f) => Graded::Derivation(f.scale(factor)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Graded::Chain(c) => c.is_zero(),
            Graded::Derivation(f) => f.is_zero(),
        }
    }

    pub fn add_graded(&self, other: &Graded) -> Result<Graded> {
        // Zero is degree-agnostic: boundaries of derivations and empty
        // brackets may carry a nominal degree that differs from the other
        // summand's.
        if other.is_zero() {
            return Ok(self.clone());
        }
        if self.is_zero() {
            return Ok(other.clone());
        }
        match (self, other) {
            (Graded::Chain(a), Graded::Chain(b)) => Ok(Graded::Chain(a.add_chain(b)?)),
            (Graded::Derivation(a), Graded::Derivation(b)) => {
                Ok(Graded::Derivation(a.add_derivation(b)))
            }
            _ => Err(Error::Chain("cannot add a chain and a derivation".into())),
        }
    }

    pub fn sub_graded(&self, other: &Graded) -> Result<Graded> {
        self.add_graded(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Boundary in the augmented complex; maps degree `0` into derivations
    /// and is zero on derivations.
    pub fn boundary(&self, lattice: &Lattice) -> Result<Graded> {
        match self {
            Graded::Chain(c) if c.degree() == 0 => {
                Ok(Graded::Derivation(boundary_zero(c, lattice)?))
            }
            Graded::Chain(c) => Ok(Graded::Chain(boundary(c)?)),
            Graded::Derivation(_) => Ok(Graded::Derivation(Derivation::zero())),
        }
    }
}

/// Enumerate ascending index subsets of `{0..n}` of size `k` together with
/// the sign of the (subset, complement) shuffle.
fn shuffles(n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let complement: Vec<usize> = (0..n).filter(|i| !subset.contains(i)).collect();
        // Shuffle sign: parity of the permutation (subset..., complement...).
        let mut inversions = 0usize;
        for &s in &subset {
            inversions += complement.iter().filter(|&&c| c < s).count();
        }
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        out.push((subset.clone(), complement, sign));

        // Next combination in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if subset[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Chain–chain bracket: the shuffle sum
/// `{f,g}_J = Σ_{(S,S^c)} sgn · [f_{J_S}, g_{J_{S^c}}]`
/// over ascending `(p+1 | q+1)` splits of the index tuple, normalized so
/// that `{h,h}_{jk} = 2[h_j,h_k]` for 0-chains.
fn bracket_chain_chain(f: &Chain, g: &Chain, lattice: &Lattice) -> Result<Chain> {
    let p = f.degree();
    let q = g.degree();
    let mut out = Chain::new(p + q + 1)?;
    let splits = shuffles(p + q + 2, p + 1);

    // Candidate result tuples: unions of disjoint canonical tuples.
    let mut candidates: BTreeSet<Vec<SiteId>> = BTreeSet::new();
    for ft in f.entries.keys() {
        for gt in g.entries.keys() {
            if ft.iter().any(|j| gt.contains(j)) {
                continue;
            }
            let mut merged: Vec<SiteId> = ft.iter().chain(gt.iter()).copied().collect();
            merged.sort_unstable();
            candidates.insert(merged);
        }
    }

    for tuple in candidates {
        let mut value = LocalOperator::zero();
        for (subset, complement, sign) in &splits {
            let f_tuple: Vec<SiteId> = subset.iter().map(|&i| tuple[i]).collect();
            let g_tuple: Vec<SiteId> = complement.iter().map(|&i| tuple[i]).collect();
            let f_op = f.get(&f_tuple);
            if f_op.is_zero() {
                continue;
            }
            let g_op = g.get(&g_tuple);
            if g_op.is_zero() {
                continue;
            }
            value.add_assign(
                &f_op
                    .commutator(&g_op, lattice)
                    .scale(Complex64::new(*sign, 0.0)),
            );
        }
        if !value.is_zero() {
            out.set(&tuple, &value)?;
        }
    }
    Ok(out)
}

/// Derivation-on-chain bracket `{F,g}_{j_0…j_q} = F(g_{j_0…j_q})`.
fn bracket_derivation_chain(f: &Derivation, g: &Chain, lattice: &Lattice) -> Result<Chain> {
    let total = f.total();
    let mut out = Chain::new(g.degree())?;
    for (tuple, op) in &g.entries {
        let acted = total.commutator(op, lattice);
        if !acted.is_zero() {
            out.set(tuple, &acted)?;
        }
    }
    Ok(out)
}

/// The 1-shifted graded Lie bracket on the augmented complex.
///
/// Chain–chain gives the shuffle sum; a derivation acts componentwise on a
/// chain; two derivations close into their commutator derivation.  The
/// remaining orders follow from graded skew-symmetry
/// `{x,y} = −(−1)^{(|x|+1)(|y|+1)} {y,x}`.
pub fn graded_bracket(x: &Graded, y: &Graded, lattice: &Lattice) -> Result<Graded> {
    match (x, y) {
        (Graded::Chain(f), Graded::Chain(g)) => {
            Ok(Graded::Chain(bracket_chain_chain(f, g, lattice)?))
        }
        (Graded::Derivation(f), Graded::Chain(g)) => {
            Ok(Graded::Chain(bracket_derivation_chain(f, g, lattice)?))
        }
        (Graded::Chain(f), Graded::Derivation(g)) => {
            // {f,G} = −(−1)^{(|f|+1)·0} {G,f} = −{G,f}.
            let flipped = bracket_derivation_chain(g, f, lattice)?;
            Ok(Graded::Chain(flipped.scale(Complex64::new(-1.0, 0.0))))
        }
        (Graded::Derivation(f), Graded::Derivation(g)) => {
            let commutator = f.total().commutator(&g.total(), lattice);
            Ok(Graded::Derivation(Derivation::from_operator(
                &commutator,
                lattice,
            )))
        }
    }
}

/// Derived bracket on 0-chains: `[f,g}_j = Σ_k [f_k, g_j] = {∂f, g}_j`.
pub fn derived_bracket(f: &Chain, g: &Chain, lattice: &Lattice) -> Result<Chain> {
    if f.degree() != 0 || g.degree() != 0 {
        return Err(Error::Chain("derived bracket expects two 0-chains".into()));
    }
    bracket_derivation_chain(&boundary_zero(f, lattice)?, g, lattice)
}

// -- contraction -------------------------------------------------------------

/// Contract a degree-`q` chain with `q+1` pairwise disjoint site regions:
/// the derivation `Y ↦ Σ_{j_k∈A_k} b^Y_{j_0…j_q}`.
pub fn contract(b: &Chain, regions: &[BTreeSet<SiteId>], lattice: &Lattice) -> Result<Derivation> {
    let total = contract_sum(b, regions)?;
    Ok(Derivation::from_operator(&total, lattice))
}

/// The plain operator sum `Σ_{j_k∈A_k} b_{j_0…j_q}` over ordered tuples
/// drawn from the regions (used directly for conical contractions).
pub fn contract_sum(b: &Chain, regions: &[BTreeSet<SiteId>]) -> Result<LocalOperator> {
    if regions.len() != b.degree() + 1 {
        return Err(Error::Chain(format!(
            "contraction of a degree-{} chain needs {} regions, got {}",
            b.degree(),
            b.degree() + 1,
            regions.len()
        )));
    }
    for (i, a) in regions.iter().enumerate() {
        for b2 in regions.iter().skip(i + 1) {
            if a.intersection(b2).next().is_some() {
                return Err(Error::Chain("contraction regions must be disjoint".into()));
            }
        }
    }

    let mut total = LocalOperator::zero();
    for (tuple, op) in &b.entries {
        // Each site of the canonical tuple must land in exactly one region;
        // that forces the ordered tuple, whose sign is the sorting parity.
        let mut ordered: Vec<Option<SiteId>> = vec![None; regions.len()];
        let mut valid = true;
        for &site in tuple {
            match regions.iter().position(|r| r.contains(&site)) {
                Some(k) if ordered[k].is_none() => ordered[k] = Some(site),
                _ => {
                    valid = false;
                    break;
                }
            }
        }
        if !valid {
            continue;
        }
        let ordered: Vec<SiteId> = ordered.into_iter().map(Option::unwrap).collect();
        let (_, sign) = canonicalize(&ordered).expect("distinct sites");
        total.add_assign(&op.scale(Complex64::new(sign, 0.0)));
    }
    Ok(total)
}

/// Contract a degree-`d` chain with a conical partition of `R^d`, returning
/// the single local operator of the cochain contraction.
pub fn contract_conical(
    b: &Chain,
    partition: &ConicalPartition,
    lattice: &Lattice,
) -> Result<LocalOperator> {
    let regions: Vec<BTreeSet<SiteId>> = partition
        .region_sites(lattice)
        .into_iter()
        .map(|sites| sites.into_iter().collect())
        .collect();
    if b.degree() + 1 != regions.len() {
        return Err(Error::Chain(format!(
            "conical contraction needs degree {} for this partition, got {}",
            regions.len() - 1,
            b.degree()
        )));
    }
    contract_sum(b, &regions)
}

/// Total operator of a summable derivation (free-standing convenience).
pub fn summable_total(f: &Derivation) -> LocalOperator {
    f.total()
}

// -- randomized inputs for self-checks --------------------------------------

/// Random traceless anti-self-adjoint operator on the given support sites:
/// every non-identity string over the support, with uniform imaginary
/// coefficients in `i·[−1,1]`.
pub fn random_asa_operator<R: Rng>(
    sites: &[SiteId],
    lattice: &Lattice,
    rng: &mut R,
) -> LocalOperator {
    let mut op = LocalOperator::zero();
    // Enumerate strings by mixed-radix counting over basis indices.
    let radices: Vec<usize> = sites
        .iter()
        .map(|&j| lattice.onsite_dim(j) * lattice.onsite_dim(j))
        .collect();
    let mut digits = vec![0usize; sites.len()];
    loop {
        // Advance.
        let mut i = 0;
        loop {
            if i == digits.len() {
                return op;
            }
            digits[i] += 1;
            if digits[i] < radices[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        let factors: Vec<(SiteId, usize)> = sites
            .iter()
            .zip(&digits)
            .filter(|(_, &d)| d > 0)
            .map(|(&j, &d)| (j, d))
            .collect();
        if factors.is_empty() {
            continue;
        }
        let coeff = Complex64::new(0.0, rng.random_range(-1.0..1.0));
        op.add_term(
            crate::algebra::BasisString::new(factors).expect("distinct sites"),
            coeff,
        );
    }
}

/// Random degree-`q` chain over tuples whose pairwise site distance stays
/// within `2·range`, with values supported on the tuple sites.
pub fn random_chain<R: Rng>(
    degree: usize,
    range: f64,
    lattice: &Lattice,
    rng: &mut R,
) -> Result<Chain> {
    let n = lattice.len();
    let mut chain = Chain::new(degree)?;
    let mut tuple = vec![0usize; degree + 1];
    fill_tuples(&mut tuple, 0, 0, n, &mut |t| {
        let mut spread = 0.0f64;
        for (i, &a) in t.iter().enumerate() {
            for &b in t.iter().skip(i + 1) {
                let d: f64 = lattice
                    .position(a)
                    .iter()
                    .zip(lattice.position(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                spread = spread.max(d);
            }
        }
        if spread <= 2.0 * range {
            let op = random_asa_operator(t, lattice, rng);
            chain.add(t, &op).expect("ascending tuple");
        }
    });
    Ok(chain)
}

/// Enumerate strictly ascending tuples, invoking the callback on each.
fn fill_tuples<F: FnMut(&[SiteId])>(
    tuple: &mut Vec<SiteId>,
    pos: usize,
    start: usize,
    n: usize,
    f: &mut F,
) {
    if pos == tuple.len() {
        f(tuple);
        return;
    }
    for s in start..n {
        tuple[pos] = s;
        fill_tuples(tuple, pos + 1, s + 1, n, f);
    }
}

// -- self-check report -------------------------------------------------------

/// Residuals of the structural identities on randomized inputs; all should
/// be at floating-point scale on any lattice.
#[derive(Debug, Clone)]
pub struct ComplexReport {
    /// `max ‖∂∂a‖` over random 2-chains.
    pub boundary_squared: f64,
    /// `max ‖(h∂+∂h)a − a‖` over random 1- and 2-chains.
    pub homotopy_identity: f64,
    /// `max ‖∂₀h₋₁F − F‖` over random derivations.
    pub augmentation_identity: f64,
    /// Graded skew-symmetry residual over random pairs.
    pub graded_skew: f64,
    /// Graded Jacobi residual over random triples.
    pub graded_jacobi: f64,
    /// Graded Leibniz residual over random pairs.
    pub graded_leibniz: f64,
}

impl ComplexReport {
    pub fn worst(&self) -> f64 {
        self.boundary_squared
            .max(self.homotopy_identity)
            .max(self.augmentation_identity)
            .max(self.graded_skew)
            .max(self.graded_jacobi)
            .max(self.graded_leibniz)
    }
}

/// Run the identity checks on seeded random chains over the lattice.
pub fn self_check<R: Rng>(lattice: &Lattice, cases: usize, rng: &mut R) -> Result<ComplexReport> {
    let mut report = ComplexReport {
        boundary_squared: 0.0,
        homotopy_identity: 0.0,
        augmentation_identity: 0.0,
        graded_skew: 0.0,
        graded_jacobi: 0.0,
        graded_leibniz: 0.0,
    };
    let range = 1.5;
    for _ in 0..cases {
        let c2 = random_chain(2, range, lattice, rng)?;
        report.boundary_squared = report
            .boundary_squared
            .max(boundary(&boundary(&c2)?)?.max_coeff());

        for degree in [1usize, 2] {
            let a = random_chain(degree, range, lattice, rng)?;
            let lhs = homotopy(&boundary(&a)?, lattice)?.add_chain(&boundary(&homotopy(&a, lattice)?)?)?;
            report.homotopy_identity = report
                .homotopy_identity
                .max(lhs.sub_chain(&a)?.max_coeff());
        }
        // Degree 0: h₋₁∂₀ + ∂h₀ = id.
        let a0 = random_chain(0, range, lattice, rng)?;
        let lhs = homotopy_minus_one(&boundary_zero(&a0, lattice)?, lattice)?
            .add_chain(&boundary(&homotopy(&a0, lattice)?)?)?;
        report.homotopy_identity = report
            .homotopy_identity
            .max(lhs.sub_chain(&a0)?.max_coeff());

        let f_op = random_asa_operator(&pick_sites(lattice, rng), lattice, rng);
        let f_der = Derivation::from_operator(&f_op, lattice);
        let roundtrip = boundary_zero(&homotopy_minus_one(&f_der, lattice)?, lattice)?;
        report.augmentation_identity = report
            .augmentation_identity
            .max(roundtrip.sub_derivation(&f_der).max_coeff());

        // Bracket laws on low degrees.
        let x = Graded::Chain(random_chain(0, range, lattice, rng)?);
        let y = Graded::Chain(random_chain(1, range, lattice, rng)?);
        let z = Graded::Derivation(Derivation::from_operator(
            &random_asa_operator(&pick_sites(lattice, rng), lattice, rng),
            lattice,
        ));
        for (a, b) in [(&x, &y), (&x, &z), (&y, &z), (&x, &x)] {
            report.graded_skew = report.graded_skew.max(skew_residual(a, b, lattice)?);
            report.graded_leibniz = report.graded_leibniz.max(leibniz_residual(a, b, lattice)?);
        }
        report.graded_jacobi = report.graded_jacobi.max(jacobi_residual(&x, &y, &z, lattice)?);
    }
    Ok(report)
}

fn pick_sites<R: Rng>(lattice: &Lattice, rng: &mut R) -> Vec<SiteId> {
    let n = lattice.len();
    let first = rng.random_range(0..n);
    let mut sites = vec![first];
    let second = rng.random_range(0..n);
    if second != first {
        sites.push(second);
        sites.sort_unstable();
    }
    sites
}

/// `‖{x,y} + (−1)^{(|x|+1)(|y|+1)} {y,x}‖`.
pub fn skew_residual(x: &Graded, y: &Graded, lattice: &Lattice) -> Result<f64> {
    let xy = graded_bracket(x, y, lattice)?;
    let yx = graded_bracket(y, x, lattice)?;
    let sign = if ((x.degree() + 1) * (y.degree() + 1)) % 2 == 0 {
        1.0
    } else {
        -1.0
    };
    Ok(xy.add_graded(&yx.scale(Complex64::new(sign, 0.0)))?.max_coeff())
}

/// `‖∂{x,y} − {∂x,y} − (−1)^{|x|+1}{x,∂y}‖`.
pub fn leibniz_residual(x: &Graded, y: &Graded, lattice: &Lattice) -> Result<f64> {
    let lhs = graded_bracket(x, y, lattice)?.boundary(lattice)?;
    let first = graded_bracket(&x.boundary(lattice)?, y, lattice)?;
    let sign = if (x.degree() + 1) % 2 == 0 { 1.0 } else { -1.0 };
    let second = graded_bracket(x, &y.boundary(lattice)?, lattice)?.scale(Complex64::new(sign, 0.0));
    Ok(lhs.sub_graded(&first)?.sub_graded(&second)?.max_coeff())
}

/// Three-term graded Jacobi residual with the paper's sign convention.
pub fn jacobi_residual(x: &Graded, y: &Graded, z: &Graded, lattice: &Lattice) -> Result<f64> {
    let term = |a: &Graded, b: &Graded, c: &Graded| -> Result<Graded> {
        let inner = graded_bracket(b, c, lattice)?;
        let outer = graded_bracket(a, &inner, lattice)?;
        let sign = if ((a.degree() + 1) * (c.degree() + 1)) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        Ok(outer.scale(Complex64::new(sign, 0.0)))
    };
    let sum = term(x, y, z)?
        .add_graded(&term(y, z, x)?)?
        .add_graded(&term(z, x, y)?)?;
    Ok(sum.max_coeff())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::text::parse_operator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(text: &str, lat: &Lattice) -> LocalOperator {
        parse_operator(text, lat).unwrap()
    }

    #[test]
    fn boundary_of_single_pair() {
        let lat = Lattice::chain(4).unwrap();
        let x = op("1i 1:x", &lat);
        let mut b = Chain::new(1).unwrap();
        b.set(&[1, 2], &x).unwrap();
        let db = boundary(&b).unwrap();
        assert_eq!(db.get(&[2]), x);
        assert_eq!(db.get(&[1]), x.scale(Complex64::new(-1.0, 0.0)));
        assert!(db.get(&[0]).is_zero());
    }

    #[test]
    fn skew_lookup_and_repeated_indices() {
        let lat = Lattice::chain(3).unwrap();
        let x = op("1i 0:z", &lat);
        let mut b = Chain::new(1).unwrap();
        b.set(&[2, 0], &x).unwrap();
        assert_eq!(b.get(&[0, 2]), x.scale(Complex64::new(-1.0, 0.0)));
        assert!(b.get(&[1, 1]).is_zero());
        let mut c = Chain::new(1).unwrap();
        assert!(c.set(&[1, 1], &x).is_err());
    }

    #[test]
    fn boundary_squared_vanishes() {
        let lat = Lattice::grid(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_chain(2, 2.0, &lat, &mut rng).unwrap();
        assert!(!c.is_zero());
        let ddc = boundary(&boundary(&c).unwrap()).unwrap();
        assert_eq!(ddc.max_coeff(), 0.0);
    }

    #[test]
    fn boundary_zero_gives_unit_bricks() {
        let lat = Lattice::chain(2).unwrap();
        let mut a = Chain::new(0).unwrap();
        a.set(&[0], &op("0.5i 0:z", &lat)).unwrap();
        a.set(&[1], &op("0.5i 1:z", &lat)).unwrap();
        let f = boundary_zero(&a, &lat).unwrap();
        assert_eq!(f.n_components(), 2);
        for (brick, component) in f.components() {
            assert_eq!(brick.sides(), vec![1]);
            assert!((component.max_coeff() - 0.5).abs() < 1e-15);
        }
        assert_eq!(summable_total(&f), op("0.5i 0:z ; 0.5i 1:z", &lat));
    }

    #[test]
    fn h_minus_one_splits_brick_uniformly() {
        let lat = Lattice::chain(4).unwrap();
        // One brick covering sites 1 and 2.
        let f = Derivation::from_operator(&op("1i 1:x 2:x", &lat), &lat);
        assert_eq!(f.n_components(), 1);
        let chain = homotopy_minus_one(&f, &lat).unwrap();
        assert_eq!(chain.get(&[1]), op("0.5i 1:x 2:x", &lat));
        assert_eq!(chain.get(&[2]), op("0.5i 1:x 2:x", &lat));
        assert!(chain.get(&[0]).is_zero());
        // Round trip.
        let back = boundary_zero(&chain, &lat).unwrap();
        assert!(back.sub_derivation(&f).max_coeff() < 1e-15);
    }

    #[test]
    fn homotopy_identity_on_random_chains() {
        let lat = Lattice::grid(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for degree in [1usize, 2] {
            let a = random_chain(degree, 1.5, &lat, &mut rng).unwrap();
            assert!(!a.is_zero());
            let hda = homotopy(&boundary(&a).unwrap(), &lat).unwrap();
            let dha = boundary(&homotopy(&a, &lat).unwrap()).unwrap();
            let residual = hda
                .add_chain(&dha)
                .unwrap()
                .sub_chain(&a)
                .unwrap()
                .max_coeff();
            assert!(residual < 1e-12, "degree {degree}: residual {residual:e}");
        }
    }

    #[test]
    fn homotopy_identity_in_degree_zero() {
        let lat = Lattice::chain(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_chain(0, 1.0, &lat, &mut rng).unwrap();
        let part1 = homotopy_minus_one(&boundary_zero(&a, &lat).unwrap(), &lat).unwrap();
        let part2 = boundary(&homotopy(&a, &lat).unwrap()).unwrap();
        let residual = part1
            .add_chain(&part2)
            .unwrap()
            .sub_chain(&a)
            .unwrap()
            .max_coeff();
        assert!(residual < 1e-12, "residual {residual:e}");
    }

    #[test]
    fn zero_chain_self_bracket_doubles() {
        let lat = Lattice::chain(3).unwrap();
        let mut h = Chain::new(0).unwrap();
        h.set(&[0], &op("1i 0:z", &lat)).unwrap();
        h.set(&[1], &op("1i 0:x 1:x", &lat)).unwrap();
        let hh = match graded_bracket(
            &Graded::Chain(h.clone()),
            &Graded::Chain(h.clone()),
            &lat,
        )
        .unwrap()
        {
            Graded::Chain(c) => c,
            _ => panic!("expected a chain"),
        };
        let direct = h.get(&[0]).commutator(&h.get(&[1]), &lat);
        assert_eq!(hh.get(&[0, 1]), direct.scale(Complex64::new(2.0, 0.0)));
    }

    #[test]
    fn bracket_laws_on_seeded_inputs() {
        let lat = Lattice::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let report = self_check(&lat, 3, &mut rng).unwrap();
        assert!(report.worst() < 1e-12, "worst residual {:e}", report.worst());
    }

    #[test]
    fn derived_bracket_matches_definition() {
        let lat = Lattice::chain(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let f = random_chain(0, 1.0, &lat, &mut rng).unwrap();
        let g = random_chain(0, 1.0, &lat, &mut rng).unwrap();
        let derived = derived_bracket(&f, &g, &lat).unwrap();
        // Direct definition: [f,g}_j = Σ_k [f_k, g_j].
        let f_total = boundary_zero(&f, &lat).unwrap().total();
        for j in 0..lat.len() {
            let expect = f_total.commutator(&g.get(&[j]), &lat);
            assert!(derived.get(&[j]).sub(&expect).max_coeff() < 1e-13);
        }
        // Antisymmetrization is boundary-compatible:
        // ∂₀([f,g} − [g,f}) = 2{∂f, ∂g}.
        let anti = derived
            .sub_chain(&derived_bracket(&g, &f, &lat).unwrap())
            .unwrap();
        let lhs = boundary_zero(&anti, &lat).unwrap();
        let df = Graded::Derivation(boundary_zero(&f, &lat).unwrap());
        let dg = Graded::Derivation(boundary_zero(&g, &lat).unwrap());
        let rhs = match graded_bracket(&df, &dg, &lat).unwrap() {
            Graded::Derivation(d) => d.scale(Complex64::new(2.0, 0.0)),
            _ => panic!("expected a derivation"),
        };
        assert!(lhs.sub_derivation(&rhs).max_coeff() < 1e-12);
    }

    #[test]
    fn contraction_of_zero_chain_with_point_region() {
        let lat = Lattice::chain(3).unwrap();
        let mut h = Chain::new(0).unwrap();
        h.set(&[1], &op("1i 1:z", &lat)).unwrap();
        h.set(&[2], &op("1i 2:z", &lat)).unwrap();
        let region: BTreeSet<SiteId> = [1].into();
        let f = contract(&h, &[region], &lat).unwrap();
        assert_eq!(f.total(), op("1i 1:z", &lat));
    }

    #[test]
    fn contraction_rejects_overlap() {
        let lat = Lattice::chain(3).unwrap();
        let mut b = Chain::new(1).unwrap();
        b.set(&[0, 1], &op("1i 0:x 1:x", &lat)).unwrap();
        let a: BTreeSet<SiteId> = [0, 1].into();
        let c: BTreeSet<SiteId> = [1, 2].into();
        assert!(contract(&b, &[a, c], &lat).is_err());
    }

    #[test]
    fn cut_current_matches_hand_enumeration() {
        let lat = Lattice::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = random_chain(1, 1.5, &lat, &mut rng).unwrap();
        let left: BTreeSet<SiteId> = [0, 1].into();
        let right: BTreeSet<SiteId> = [2, 3].into();
        let contracted = contract_sum(&b, &[left.clone(), right.clone()]).unwrap();
        let mut expect = LocalOperator::zero();
        for &j0 in &left {
            for &j1 in &right {
                expect.add_assign(&b.get(&[j0, j1]));
            }
        }
        assert!(contracted.sub(&expect).max_coeff() < 1e-14);
    }

    #[test]
    fn stokes_conical_contraction_vanishes() {
        // d = 1: a line partition; the conical contraction of any boundary
        // is exactly zero.
        let lat = Lattice::chain(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let c = random_chain(2, 1.5, &lat, &mut rng).unwrap();
        assert!(!c.is_zero());
        let partition = ConicalPartition::line(3.0);
        let value = contract_conical(&boundary(&c).unwrap(), &partition, &lat).unwrap();
        assert!(value.max_coeff() < 1e-13);

        // d = 2: sector partition on a grid.  The cancellation is exact in
        // exact arithmetic; float summation order leaves ~1e-16.
        let lat2 = Lattice::grid(3, 3).unwrap();
        let c2 = random_chain(3, 1.2, &lat2, &mut rng).unwrap();
        assert!(!c2.is_zero());
        let partition2 = ConicalPartition::sectors([1.5, 1.5], [0.3, 2.4, 4.3]).unwrap();
        let value2 = contract_conical(&boundary(&c2).unwrap(), &partition2, &lat2).unwrap();
        assert!(value2.max_coeff() < 1e-13);
    }

    #[test]
    fn injectivity_surrogate() {
        // If ∂₀a = 0 then the derivation action vanishes on probes.
        let lat = Lattice::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b = random_chain(1, 1.5, &lat, &mut rng).unwrap();
        let a = boundary(&b).unwrap();
        let f = boundary_zero(&a, &lat).unwrap();
        assert!(f.max_coeff() < 1e-13);
        for j in 0..lat.len() {
            let probe = op(&format!("1 {j}:x"), &lat);
            assert!(f.apply(&probe, &lat).max_coeff() < 1e-13);
        }
    }

    #[test]
    fn chain_and_derivation_text_round_trip() {
        let lat = Lattice::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let b = random_chain(1, 1.5, &lat, &mut rng).unwrap();
        let text = b.to_text(&lat);
        let back = Chain::parse(&text, 1, &lat).unwrap();
        assert!(b.sub_chain(&back).unwrap().max_coeff() < 1e-15);

        let f = Derivation::from_operator(&op("1i 0:x 1:x ; 0.5i 2:z", &lat), &lat);
        let text = f.to_text(&lat);
        let back = Derivation::parse(&text, &lat).unwrap();
        assert!(f.sub_derivation(&back).max_coeff() < 1e-15);
    }

    #[test]
    fn derivation_primitivity_and_apply() {
        let lat = Lattice::chain(3).unwrap();
        let a = op("1i 0:x 1:x ; 1i 1:z ; 0.5i 0:y 2:y", &lat);
        let f = Derivation::from_operator(&a, &lat);
        assert_eq!(f.primitivity_defect(&lat), 0.0);
        let probe = op("1 1:x", &lat);
        let direct = a.commutator(&probe, &lat);
        assert!(f.apply(&probe, &lat).sub(&direct).max_coeff() < 1e-14);
    }

    #[test]
    fn degree_cap_enforced() {
        assert!(Chain::new(4).is_ok());
        assert!(Chain::new(5).is_err());
    }
}
