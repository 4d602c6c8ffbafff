//! Lattice geometry: finite site sets in `R^d`, the poset of half-open
//! integer bricks with its Möbius function, and conical partitions.
//!
//! Bricks are products of half-open intervals `[n_i, m_i)` with integer
//! corners, ordered by inclusion and augmented with a bottom element (the
//! empty brick).  The Möbius function of this poset drives the brick
//! decomposition of local operators: on each axis it is `(-1)^{a+b}` for
//! corner offsets `a, b ∈ {0,1}` and zero otherwise, with the empty brick
//! handled by the poset recursion.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Index of a site within a [`Lattice`].
pub type SiteId = usize;

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

/// A finite set of labelled sites in `R^d`, each carrying a local Hilbert
/// space of dimension `d_j >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    positions: Vec<Vec<f64>>,
    onsite_dims: Vec<usize>,
    min_spacing: f64,
    brick_covering: bool,
}

impl Lattice {
    /// Build a lattice from explicit site coordinates and on-site dimensions.
    ///
    /// Validates that all coordinates have length `dim`, that sites are
    /// pairwise distinct, and that every on-site dimension is at least 2.
    pub fn new(dim: usize, positions: Vec<Vec<f64>>, onsite_dims: Vec<usize>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Lattice("lattice needs at least one site".into()));
        }
        if positions.len() != onsite_dims.len() {
            return Err(Error::Lattice(format!(
                "{} positions but {} on-site dimensions",
                positions.len(),
                onsite_dims.len()
            )));
        }
        for (j, p) in positions.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Lattice(format!(
                    "site {j} has coordinate of length {} in a dimension-{dim} lattice",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Lattice(format!("site {j} has non-finite coordinate")));
            }
        }
        for (j, d) in onsite_dims.iter().enumerate() {
            if *d < 2 {
                return Err(Error::Lattice(format!(
                    "site {j} has on-site dimension {d}; need at least 2"
                )));
            }
        }
        let mut min_spacing = f64::INFINITY;
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d = euclid(&positions[i], &positions[j]);
                if d == 0.0 {
                    return Err(Error::Lattice(format!("sites {i} and {j} coincide")));
                }
                min_spacing = min_spacing.min(d);
            }
        }
        if positions.len() == 1 {
            min_spacing = 1.0;
        }
        let brick_covering = covering(dim, &positions);
        Ok(Lattice {
            dim,
            positions,
            onsite_dims,
            min_spacing,
            brick_covering,
        })
    }

    /// A 1d chain of `n` spin-1/2 sites at half-integer coordinates
    /// `1/2, 3/2, ...`, so every unit brick `[k, k+1)` holds exactly one site.
    pub fn chain(n: usize) -> Result<Self> {
        let positions = (0..n).map(|j| vec![j as f64 + 0.5]).collect();
        Lattice::new(1, positions, vec![2; n])
    }

    /// An `nx x ny` square patch of spin-1/2 sites at half-integer
    /// coordinates in `R^2`.
    pub fn grid(nx: usize, ny: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                positions.push(vec![x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
        let n = positions.len();
        Lattice::new(2, positions, vec![2; n])
    }

    /// A single spin-1/2 site in `R^0` (parameter-only models).
    pub fn point() -> Result<Self> {
        Lattice::new(0, vec![vec![]], vec![2])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, j: SiteId) -> &[f64] {
        &self.positions[j]
    }

    pub fn onsite_dim(&self, j: SiteId) -> usize {
        self.onsite_dims[j]
    }

    pub fn sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        0..self.positions.len()
    }

    pub fn min_spacing(&self) -> f64 {
        self.min_spacing
    }

    /// True when every unit brick inside the integer bounding box of the
    /// sites contains at least one site.
    pub fn brick_covering(&self) -> bool {
        self.brick_covering
    }

    pub fn distance(&self, i: SiteId, j: SiteId) -> f64 {
        euclid(&self.positions[i], &self.positions[j])
    }

    /// Sites inside a brick (empty list for the empty brick).
    pub fn sites_in_brick(&self, brick: &Brick) -> Vec<SiteId> {
        self.sites()
            .filter(|&j| brick.contains_point(&self.positions[j]))
            .collect()
    }

    /// Sites within Euclidean distance `r` of site `j` (closed ball).
    pub fn ball(&self, j: SiteId, r: f64) -> Vec<SiteId> {
        self.sites()
            .filter(|&k| self.distance(j, k) <= r + 1e-12)
            .collect()
    }

    /// Largest pairwise distance between sites.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in self.sites() {
            for j in self.sites() {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    /// The smallest brick containing the given sites.  Errors on an empty
    /// site list (the empty brick is not a brick of any site set).
    pub fn minimal_brick(&self, sites: &[SiteId]) -> Result<Brick> {
        if sites.is_empty() {
            return Err(Error::Brick("minimal brick of an empty site set".into()));
        }
        let mut lo = vec![i64::MAX; self.dim];
        let mut hi = vec![i64::MIN; self.dim];
        for &j in sites {
            for (a, &x) in self.positions[j].iter().enumerate() {
                let f = x.floor() as i64;
                lo[a] = lo[a].min(f);
                hi[a] = hi[a].max(f + 1);
            }
        }
        Brick::new(lo, hi)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn covering(dim: usize, positions: &[Vec<f64>]) -> bool {
    if dim == 0 {
        return !positions.is_empty();
    }
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    for p in positions {
        for (a, &x) in p.iter().enumerate() {
            let f = x.floor() as i64;
            lo[a] = lo[a].min(f);
            hi[a] = hi[a].max(f + 1);
        }
    }
    let mut cells: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for p in positions {
        let cell: Vec<i64> = p.iter().map(|&x| x.floor() as i64).collect();
        *cells.entry(cell).or_insert(0) += 1;
    }
    let total: i64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
    cells.len() as i64 == total
}

// ---------------------------------------------------------------------------
// Bricks
// ---------------------------------------------------------------------------

/// A half-open box `[lo_1, hi_1) x ... x [lo_d, hi_d)` with integer corners,
/// or the empty brick (the bottom of the brick poset).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Brick {
    /// The bottom element of the poset.
    Empty,
    /// A non-degenerate box; `lo[i] < hi[i]` on every axis.
    Box { lo: Vec<i64>, hi: Vec<i64> },
}

impl Brick {
    /// Build a non-empty brick, validating `lo[i] < hi[i]`.
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Brick("corner dimension mismatch".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::Brick(format!(
                "degenerate brick corners {lo:?} .. {hi:?}"
            )));
        }
        Ok(Brick::Box { lo, hi })
    }

    /// The unit brick containing a point.
    pub fn unit_of(point: &[f64]) -> Self {
        let lo: Vec<i64> = point.iter().map(|&x| x.floor() as i64).collect();
        let hi: Vec<i64> = lo.iter().map(|&l| l + 1).collect();
        Brick::Box { lo, hi }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Brick::Empty)
    }

    /// Spatial dimension, if non-empty.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Brick::Empty => None,
            Brick::Box { lo, .. } => Some(lo.len()),
        }
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        match self {
            Brick::Empty => false,
            Brick::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l as f64 && x < h as f64),
        }
    }

    /// Poset order: is `self` contained in `other`?
    pub fn subset_of(&self, other: &Brick) -> bool {
        match (self, other) {
            (Brick::Empty, _) => true,
            (_, Brick::Empty) => false,
            (Brick::Box { lo: a, hi: b }, Brick::Box { lo: c, hi: d }) => {
                a.len() == c.len()
                    && a.iter().zip(c).all(|(x, y)| x >= y)
                    && b.iter().zip(d).all(|(x, y)| x <= y)
            }
        }
    }

    /// The smallest brick containing both arguments.
    pub fn join(&self, other: &Brick) -> Brick {
        match (self, other) {
            (Brick::Empty, b) => b.clone(),
            (a, Brick::Empty) => a.clone(),
            (Brick::Box { lo: a, hi: b }, Brick::Box { lo: c, hi: d }) => {
                let lo = a.iter().zip(c).map(|(x, y)| *x.min(y)).collect();
                let hi = b.iter().zip(d).map(|(x, y)| *x.max(y)).collect();
                Brick::Box { lo, hi }
            }
        }
    }

    /// Side lengths.
    pub fn sides(&self) -> Vec<i64> {
        match self {
            Brick::Empty => vec![],
            Brick::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).collect(),
        }
    }

    /// Euclidean diameter of the closure (0 for the empty brick).
    pub fn diameter(&self) -> f64 {
        self.sides()
            .iter()
            .map(|&s| (s * s) as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest distance from `p` to a point of the brick closure.
    pub fn max_distance_to(&self, p: &[f64]) -> f64 {
        match self {
            Brick::Empty => 0.0,
            Brick::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(p)
                .map(|((&l, &h), &x)| {
                    let dl = (x - l as f64).abs();
                    let dh = (x - h as f64).abs();
                    let m = dl.max(dh);
                    m * m
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl fmt::Display for Brick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Brick::Empty => write!(f, "()"),
            Brick::Box { lo, hi } => {
                if lo.is_empty() {
                    return write!(f, "[*)");
                }
                let parts: Vec<String> = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| format!("[{l},{h})"))
                    .collect();
                write!(f, "{}", parts.join("x"))
            }
        }
    }
}

impl std::str::FromStr for Brick {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "()" {
            return Ok(Brick::Empty);
        }
        if s == "[*)" {
            return Ok(Brick::Box { lo: vec![], hi: vec![] });
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for part in s.split('x') {
            let part = part.trim();
            let inner = part
                .strip_prefix('[')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| Error::Parse(format!("bad brick interval `{part}`")))?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad brick interval `{part}`")))?;
            lo.push(
                a.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("bad brick corner `{a}`: {e}")))?,
            );
            hi.push(
                b.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("bad brick corner `{b}`: {e}")))?,
            );
        }
        Brick::new(lo, hi)
    }
}

/// Möbius function of the brick poset.
///
/// For non-empty `y1 ⊆ y2` with per-axis corner offsets `a_i = lo1_i - lo2_i`
/// and `b_i = hi2_i - hi1_i` it is `prod_i (-1)^{a_i + b_i}` when all offsets
/// lie in `{0,1}` and zero otherwise.  The empty-brick values follow from the
/// defining recursion of the poset with bottom element.
pub fn mobius(y1: &Brick, y2: &Brick) -> i64 {
    match (y1, y2) {
        (Brick::Empty, Brick::Empty) => 1,
        (Brick::Empty, Brick::Box { lo, hi }) => {
            // mu(empty, Y) = -sum over non-empty Z of mu(Z, Y); per axis the
            // admissible offset sums are +1 (side 1), -1 (side 2), 0 (side >= 3).
            let mut prod: i64 = 1;
            for (l, h) in lo.iter().zip(hi) {
                prod *= match h - l {
                    1 => 1,
                    2 => -1,
                    _ => 0,
                };
            }
            -prod
        }
        (Brick::Box { .. }, Brick::Empty) => 0,
        (Brick::Box { lo: a, hi: b }, Brick::Box { lo: c, hi: d }) => {
            if a.len() != c.len() || !y1.subset_of(y2) {
                return 0;
            }
            let mut sign: i64 = 1;
            for i in 0..a.len() {
                let off_lo = a[i] - c[i];
                let off_hi = d[i] - b[i];
                if off_lo > 1 || off_hi > 1 {
                    return 0;
                }
                if (off_lo + off_hi) % 2 == 1 {
                    sign = -sign;
                }
            }
            sign
        }
    }
}

/// All sub-bricks of `y` with non-zero Möbius coefficient `mu(sub, y)`,
/// including the empty brick when its coefficient is non-zero.  At most
/// `4^d` entries.
pub fn mobius_support(y: &Brick) -> Vec<(Brick, i64)> {
    match y {
        Brick::Empty => vec![(Brick::Empty, 1)],
        Brick::Box { lo, hi } => {
            let d = lo.len();
            let mut out = Vec::new();
            // Iterate corner offsets a_i, b_i in {0,1} per axis.
            for mask in 0..(1u32 << (2 * d)) {
                let mut sub_lo = Vec::with_capacity(d);
                let mut sub_hi = Vec::with_capacity(d);
                let mut sign: i64 = 1;
                let mut degenerate = false;
                for i in 0..d {
                    let a = ((mask >> (2 * i)) & 1) as i64;
                    let b = ((mask >> (2 * i + 1)) & 1) as i64;
                    let l = lo[i] + a;
                    let h = hi[i] - b;
                    if l >= h {
                        degenerate = true;
                        break;
                    }
                    if (a + b) % 2 == 1 {
                        sign = -sign;
                    }
                    sub_lo.push(l);
                    sub_hi.push(h);
                }
                if !degenerate {
                    out.push((
                        Brick::Box {
                            lo: sub_lo,
                            hi: sub_hi,
                        },
                        sign,
                    ));
                }
            }
            let empty_mu = mobius(&Brick::Empty, y);
            if empty_mu != 0 {
                out.push((Brick::Empty, empty_mu));
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Conical partitions
// ---------------------------------------------------------------------------

/// A partition of `R^d` (`d <= 2`) into `d + 1` conical regions with a
/// common apex, plus a finite set of per-site overrides.
///
/// Region boundaries follow a half-open convention: in `d = 1` the right
/// half-line includes the apex; in `d = 2` each angular sector includes its
/// lower boundary angle.  The orientation flag fixes the order in which the
/// regions enter multi-linear contractions; flipping it reverses that order
/// (an odd permutation in `d = 1, 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConicalPartition {
    dim: usize,
    apex: Vec<f64>,
    /// Ascending sector start angles in `[0, 2pi)`; empty unless `d = 2`.
    angles: Vec<f64>,
    positive: bool,
    overrides: BTreeMap<SiteId, usize>,
}

impl ConicalPartition {
    /// The trivial partition of `R^0` (a single region).
    pub fn point() -> Self {
        ConicalPartition {
            dim: 0,
            apex: vec![],
            angles: vec![],
            positive: true,
            overrides: BTreeMap::new(),
        }
    }

    /// Two half-lines split at `apex` (`d = 1`): region 0 is `x < apex`,
    /// region 1 is `x >= apex`.
    pub fn line(apex: f64) -> Self {
        ConicalPartition {
            dim: 1,
            apex: vec![apex],
            angles: vec![],
            positive: true,
            overrides: BTreeMap::new(),
        }
    }

    /// Three angular sectors with the given ascending start angles in
    /// `[0, 2pi)` (`d = 2`).  Sector `k` spans `[angles[k], angles[k+1])`
    /// cyclically, so the sector widths always sum to `2pi`.
    pub fn sectors(apex: [f64; 2], angles: [f64; 3]) -> Result<Self> {
        let two_pi = std::f64::consts::TAU;
        for &a in &angles {
            if !(0.0..two_pi).contains(&a) {
                return Err(Error::Partition(format!(
                    "sector angle {a} outside [0, 2pi)"
                )));
            }
        }
        if !(angles[0] < angles[1] && angles[1] < angles[2]) {
            return Err(Error::Partition(
                "sector start angles must be strictly ascending".into(),
            ));
        }
        Ok(ConicalPartition {
            dim: 2,
            apex: apex.to_vec(),
            angles: angles.to_vec(),
            positive: true,
            overrides: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apex(&self) -> &[f64] {
        &self.apex
    }

    pub fn n_regions(&self) -> usize {
        self.dim + 1
    }

    pub fn orientation(&self) -> bool {
        self.positive
    }

    /// Reverse the orientation (region order in contractions).
    pub fn flipped(&self) -> Self {
        let mut p = self.clone();
        p.positive = !p.positive;
        p
    }

    /// Translate the apex; overrides are kept.
    pub fn with_apex(&self, apex: Vec<f64>) -> Result<Self> {
        if apex.len() != self.dim {
            return Err(Error::Partition("apex dimension mismatch".into()));
        }
        let mut p = self.clone();
        p.apex = apex;
        Ok(p)
    }

    /// Reassign finitely many sites to explicit regions.
    pub fn with_override(&self, site: SiteId, region: usize) -> Result<Self> {
        if region >= self.n_regions() {
            return Err(Error::Partition(format!(
                "override region {region} out of range"
            )));
        }
        let mut p = self.clone();
        p.overrides.insert(site, region);
        Ok(p)
    }

    /// Region index of a point of `R^d` (ignores overrides).
    pub fn region_of_point(&self, p: &[f64]) -> usize {
        match self.dim {
            0 => 0,
            1 => {
                if p[0] < self.apex[0] {
                    0
                } else {
                    1
                }
            }
            2 => {
                let dx = p[0] - self.apex[0];
                let dy = p[1] - self.apex[1];
                if dx == 0.0 && dy == 0.0 {
                    // The apex itself: lowest sector by convention.
                    return 0;
                }
                let mut theta = dy.atan2(dx);
                if theta < 0.0 {
                    theta += std::f64::consts::TAU;
                }
                // Sector k spans [angles[k], angles[k+1]) cyclically.
                if theta >= self.angles[0] && theta < self.angles[1] {
                    0
                } else if theta >= self.angles[1] && theta < self.angles[2] {
                    1
                } else {
                    2
                }
            }
            _ => unreachable!("conical partitions only exist for d <= 2"),
        }
    }

    /// Region index of a lattice site, honouring overrides.
    pub fn region_of_site(&self, lattice: &Lattice, j: SiteId) -> usize {
        if let Some(&r) = self.overrides.get(&j) {
            return r;
        }
        self.region_of_point(lattice.position(j))
    }

    /// The ordered regions `(A_0, ..., A_d)` as site lists, honouring the
    /// orientation flag.
    pub fn region_sites(&self, lattice: &Lattice) -> Vec<Vec<SiteId>> {
        let n = self.n_regions();
        let mut regions = vec![Vec::new(); n];
        for j in lattice.sites() {
            regions[self.region_of_site(lattice, j)].push(j);
        }
        if !self.positive && n >= 2 {
            // Reversing orientation reverses the cyclic order; for d <= 2
            // this is the swap of the last two regions.
            regions.swap(n - 2, n - 1);
        }
        regions
    }
}

impl fmt::Display for ConicalPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let apex: Vec<String> = self.apex.iter().map(|x| x.to_string()).collect();
        let angles: Vec<String> = self.angles.iter().map(|x| x.to_string()).collect();
        write!(
            f,
            "apex=({}) angles=({}) orientation={}",
            apex.join(","),
            angles.join(","),
            if self.positive { "+" } else { "-" }
        )
    }
}
