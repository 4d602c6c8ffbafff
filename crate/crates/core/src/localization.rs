//! Localization profiles, weighted norm families, and reproducing functions.
//!
//! The distance of an operator from the algebra of a ball is measured by the
//! conditional-expectation surrogate `‖A − A|_{B_j(r)}‖`, which bounds the
//! true best-approximation distance within a factor of two.  Two weighted
//! norm families are built on top of it: `norm_cev` weights the profile by
//! `(1+r)^α`, and `norm_br` weights brick components by their distance to the
//! anchor.  Reproducing functions close the toolbox: any non-increasing decay
//! function can be upper-bounded by one whose convolution square along the
//! lattice reproduces itself up to a finite constant.

use std::collections::BTreeSet;

use crate::algebra::{LocalOperator, DENSE_CAP_DEFAULT};
use crate::error::{Error, Result};
use crate::geometry::{Brick, Lattice, SiteId};

/// How a profile value was computed: exact dense operator norm, or the
/// triangle-inequality upper bound used beyond the dense cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Exact,
    UpperBound,
}

impl NormMode {
    fn label(self) -> &'static str {
        match self {
            NormMode::Exact => "exact",
            NormMode::UpperBound => "bound",
        }
    }
}

/// Sampled localization profile `r ↦ ‖A − A|_{B_j(r)}‖` of an operator
/// around an anchor site.
///
/// Radius 0 denotes the empty region, so the first value is
/// `‖A − ⟨A⟩·1‖`; positive radii are closed balls around the anchor.
/// The profile vanishes once the ball swallows the support of `A`.
#[derive(Debug, Clone)]
pub struct LocalizationProfile {
    anchor: SiteId,
    radii: Vec<f64>,
    values: Vec<f64>,
    mode: NormMode,
}

impl LocalizationProfile {
    pub fn anchor(&self) -> SiteId {
        self.anchor
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// Value at the largest sampled radius `≤ r` (profile values are
    /// constant between integer radii on an integer-spaced lattice).
    pub fn value_at(&self, r: f64) -> f64 {
        let mut current = self.values[0];
        for (radius, value) in self.radii.iter().zip(&self.values) {
            if *radius <= r {
                current = *value;
            }
        }
        current
    }

    /// `sup_r (1+r)^α · value(r)` over the sampled radii.
    pub fn weighted_sup(&self, alpha: u32) -> f64 {
        self.radii
            .iter()
            .zip(&self.values)
            .map(|(r, v)| (1.0 + r).powi(alpha as i32) * v)
            .fold(0.0f64, f64::max)
    }

    /// CSV export with header `r,value,mode`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,value,mode\n");
        for (r, v) in self.radii.iter().zip(&self.values) {
            out.push_str(&format!("{r},{v},{}\n", self.mode.label()));
        }
        out
    }
}

/// Operator norm of `op`, exact through the dense backend when the support
/// dimension fits under the cap, else the coefficient-sum upper bound.
fn op_norm_auto(op: &LocalOperator, lattice: &Lattice) -> (f64, NormMode) {
    let dim: usize = op
        .support()
        .iter()
        .map(|&j| lattice.onsite_dim(j))
        .try_fold(1usize, |acc, d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    if dim <= DENSE_CAP_DEFAULT {
        match op.norm_exact(lattice) {
            Ok(n) => (n, NormMode::Exact),
            Err(_) => (op.norm_upper(lattice), NormMode::UpperBound),
        }
    } else {
        (op.norm_upper(lattice), NormMode::UpperBound)
    }
}

/// Localization profile of `a` around the site `j`.
///
/// Radii run over the integers `0..=⌈diam(supp(a) ∪ {j})⌉`, so the final
/// sample is always zero.  All values within one profile use the same norm
/// mode so that comparisons along the profile are meaningful.
pub fn profile(a: &LocalOperator, j: SiteId, lattice: &Lattice) -> LocalizationProfile {
    let support = a.support();
    let mut r_max = 0.0f64;
    let pj = lattice.position(j);
    let mut points: Vec<&[f64]> = vec![pj];
    points.extend(support.iter().map(|&k| lattice.position(k)));
    for (i, p) in points.iter().enumerate() {
        for q in points.iter().skip(i + 1) {
            let d2: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            r_max = r_max.max(d2.sqrt());
        }
    }
    let top = r_max.ceil() as usize;

    // Decide the mode once from the full support so the profile is
    // internally consistent.
    let support_dim: usize = support
        .iter()
        .map(|&k| lattice.onsite_dim(k))
        .try_fold(1usize, |acc, d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    let mode = if support_dim <= DENSE_CAP_DEFAULT {
        NormMode::Exact
    } else {
        NormMode::UpperBound
    };

    let mut radii = Vec::with_capacity(top + 1);
    let mut values = Vec::with_capacity(top + 1);
    for r in 0..=top {
        let region: BTreeSet<SiteId> = if r == 0 {
            BTreeSet::new()
        } else {
            lattice.ball(j, r as f64).into_iter().collect()
        };
        let diff = a.sub(&a.conditional_expectation(&region));
        let value = match mode {
            NormMode::Exact => diff.norm_exact(lattice).unwrap_or_else(|_| diff.norm_upper(lattice)),
            NormMode::UpperBound => diff.norm_upper(lattice),
        };
        radii.push(r as f64);
        values.push(value);
    }
    LocalizationProfile {
        anchor: j,
        radii,
        values,
        mode,
    }
}

/// Conditional-expectation norm `‖a‖^{cev}_{j,α} = sup_r (1+r)^α ‖a − a|_{B_j(r)}‖`.
pub fn norm_cev(a: &LocalOperator, j: SiteId, alpha: u32, lattice: &Lattice) -> f64 {
    profile(a, j, lattice).weighted_sup(alpha)
}

/// Brick norm `‖a‖^{br}_{j,α} = sup_Y (1+diam({j}∪Y))^α ‖a^Y‖` over the
/// bricks carrying nonzero components.  The scalar part carries no
/// localization content and is skipped, matching `norm_cev` (which never
/// sees the identity leak out of a ball).
pub fn norm_br(a: &LocalOperator, j: SiteId, alpha: u32, lattice: &Lattice) -> f64 {
    let pj = lattice.position(j);
    let mut sup = 0.0f64;
    for (brick, component) in a.brick_decomposition(lattice) {
        let Brick::Box { .. } = brick else { continue };
        let diam = brick.diameter().max(brick.max_distance_to(pj));
        let (norm, _) = op_norm_auto(&component, lattice);
        sup = sup.max((1.0 + diam).powi(alpha as i32) * norm);
    }
    sup
}

/// A non-increasing nonnegative decay function of `r ≥ 0`.
#[derive(Debug, Clone)]
pub struct DecayFunction {
    kind: DecayKind,
}

#[derive(Debug, Clone)]
enum DecayKind {
    /// `scale · exp(−rate·r)`
    Exp { rate: f64, scale: f64 },
    /// `scale / (1+r)^{power}`
    Power { power: f64, scale: f64 },
    /// Constant value.
    Constant { value: f64 },
    /// Linear interpolation over `values[i]` at `r = i·step`, clamped to the
    /// last value beyond the table.
    Tabulated { step: f64, values: Vec<f64> },
}

impl DecayFunction {
    pub fn exp(rate: f64) -> Self {
        DecayFunction {
            kind: DecayKind::Exp { rate, scale: 1.0 },
        }
    }

    pub fn power(power: f64) -> Self {
        DecayFunction {
            kind: DecayKind::Power { power, scale: 1.0 },
        }
    }

    pub fn constant(value: f64) -> Self {
        DecayFunction {
            kind: DecayKind::Constant { value },
        }
    }

    /// Tabulated function on the uniform grid `r = i·step`.
    pub fn tabulated(step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || values.is_empty() {
            return Err(Error::Operator(
                "tabulated decay function needs a positive step and samples".into(),
            ));
        }
        for pair in values.windows(2) {
            if !(pair[1] <= pair[0] + 1e-12) || !pair[1].is_finite() || pair[1] < 0.0 {
                return Err(Error::Operator(
                    "decay function must be non-increasing and nonnegative".into(),
                ));
            }
        }
        if !values[0].is_finite() || values[0] < 0.0 {
            return Err(Error::Operator("decay function must be finite at 0".into()));
        }
        Ok(DecayFunction {
            kind: DecayKind::Tabulated { step, values },
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match &self.kind {
            DecayKind::Exp { rate, scale } => scale * (-rate * r).exp(),
            DecayKind::Power { power, scale } => scale / (1.0 + r).powf(*power),
            DecayKind::Constant { value } => *value,
            DecayKind::Tabulated { step, values } => {
                let x = r / step;
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    *values.last().unwrap()
                } else {
                    let t = x - i as f64;
                    values[i] * (1.0 - t) + values[i + 1] * t
                }
            }
        }
    }
}

/// Empirical reproducing constant
/// `C_f = max_{j,k} Σ_l f(|j−l|) f(|l−k|) / f(|j−k|)` on the finite lattice.
pub fn reproducing_constant(f: &DecayFunction, lattice: &Lattice) -> f64 {
    let n = lattice.len();
    let dist = |a: SiteId, b: SiteId| -> f64 {
        lattice
            .position(a)
            .iter()
            .zip(lattice.position(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut worst = 0.0f64;
    for j in 0..n {
        for k in 0..n {
            let denom = f.eval(dist(j, k));
            let num: f64 = (0..n).map(|l| f.eval(dist(j, l)) * f.eval(dist(l, k))).sum();
            if denom == 0.0 {
                if num > 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            worst = worst.max(num / denom);
        }
    }
    worst
}

/// Upper-bound `f` by a decay function that is reproducing for the lattice.
///
/// Two steps on a sample grid covering the lattice diameter: first replace
/// `−log f` by its largest star-shaped minorant, which makes the function
/// weakly submultiplicative; then damp by `(1+r)^{d+1}` and take a square
/// root, `f̃(r) = B √(f'(r)) / (1+r)^{d+1}` with `B² = sup (1+r)^{2d+2} f'(r)`,
/// which makes the on-lattice convolution square reproduce `f̃` up to a
/// finite constant.  The result dominates `f` at every sampled radius.
pub fn make_reproducing(f: &DecayFunction, lattice: &Lattice) -> Result<DecayFunction> {
    let f0 = f.eval(0.0);
    if f0 == 0.0 {
        // Non-increasing and nonnegative with f(0) = 0 means identically 0.
        return DecayFunction::tabulated(1.0, vec![0.0, 0.0]);
    }
    let r_max = lattice.diameter().max(1.0);
    let n_steps = 512usize;
    let step = r_max / n_steps as f64;
    let d = lattice.dim().max(1) as f64;

    // Scale so the working function starts at 1/2, keeping the log positive.
    let sigma = 2.0 * f0;
    let floor = 1e-300f64;
    let h: Vec<f64> = (0..=n_steps)
        .map(|i| -(f.eval(i as f64 * step) / sigma).max(floor).ln())
        .collect();

    // Largest star-shaped minorant of h: h~(r) = r · min_{0<s≤r} h(s)/s.
    let mut f_prime = Vec::with_capacity(n_steps + 1);
    f_prime.push(sigma * 1.0f64.min((-h[0]).exp()));
    let mut slope = f64::INFINITY;
    for i in 1..=n_steps {
        let r = i as f64 * step;
        slope = slope.min(h[i] / r);
        f_prime.push(sigma * (-(r * slope)).exp());
    }

    // Damped square root with the dominating prefactor.
    let b2 = f_prime
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 + i as f64 * step).powf(2.0 * d + 2.0) * v)
        .fold(0.0f64, f64::max);
    let mut values: Vec<f64> = f_prime
        .iter()
        .enumerate()
        .map(|(i, v)| (b2 * v).sqrt() / (1.0 + i as f64 * step).powf(d + 1.0))
        .collect();
    // Clear floating-point wiggle so the tabulated constructor's
    // monotonicity check cannot trip on noise.
    for i in 1..values.len() {
        values[i] = values[i].min(values[i - 1]);
    }
    DecayFunction::tabulated(step, values)
}
