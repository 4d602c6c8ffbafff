//! Model files: a line-oriented plain-text description of a lattice, a
//! (possibly parameterized) Hamiltonian density, symmetry data, a parameter
//! family, and a task, plus the built-in model library.
//!
//! The format is sections of `key = value` lines:
//!
//! ```text
//! [model]
//! name = tfim-chain
//!
//! [lattice]
//! kind = chain 8
//!
//! [parameters]
//! g = 1.5
//!
//! [hamiltonian]
//! each = -g j:x
//! each = -1 j:z j+1:z
//! ```
//!
//! Hamiltonian (and symmetry-charge) lines follow the operator-text term
//! syntax `coeff site:op site:op ...`, except that the coefficient may be
//! any closed-form real expression (written without spaces) over `pi`, the
//! mesh coordinates, and the names declared under `[parameters]`.  A `term`
//! line names literal sites; an `each` line is repeated for every site,
//! with `j` standing for the running site and `j+1` for its chain
//! neighbour (skipped at an open end).  The density convention matches the
//! rest of the crate: the stored terms are self-adjoint and the model's
//! ASA density is `i` times them, anchored at each term's first site.
//!
//! Parsing validates everything up front — site ranges, operator names,
//! expression well-formedness, block consistency — and reports structured
//! errors with line and column.  [`ModelSpec::emit`] produces a canonical
//! re-serialization (`emit(parse(x))` reparses to an equal spec), and the
//! model hash is the SHA-256 of that canonical text.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::algebra::site_basis::parse_op_name;
use crate::algebra::text::parse_operator;
use crate::algebra::{BasisString, LocalOperator};
use crate::complex::Chain;
use crate::descent::{Family, DESCENT_GAP_FRACTION};
use crate::error::{Error, Result};
use crate::families::{ProductGridU1, TranslationPump, PUMP_APEX, PUMP_WINDOW};
use crate::geometry::{Lattice, SiteId};
use crate::mesh::ParamMesh;
use crate::spectral::{GappedContext, SpectralContext};

// ---------------------------------------------------------------------------
// Closed-form expressions
// ---------------------------------------------------------------------------

/// Names usable in coefficient and parameter expressions beyond the mesh
/// coordinates and declared parameters.
const CONSTANTS: &[(&str, f64)] = &[("pi", std::f64::consts::PI)];

/// Functions callable in expressions.
const FUNCTIONS: &[&str] = &["sin", "cos", "exp", "sqrt"];

/// A parsed arithmetic expression over named real variables.
#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(usize, Box<Expr>),
}

impl Expr {
    fn eval(&self, env: &[(String, f64)]) -> Result<f64> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(name) => {
                if let Some((_, v)) = env.iter().rev().find(|(n, _)| n == name) {
                    *v
                } else if let Some((_, v)) = CONSTANTS.iter().find(|(n, _)| *n == name) {
                    *v
                } else {
                    return Err(Error::Model(format!("unknown name `{name}` in expression")));
                }
            }
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => a.eval(env)? / b.eval(env)?,
            Expr::Call(f, a) => {
                let x = a.eval(env)?;
                match FUNCTIONS[*f] {
                    "sin" => x.sin(),
                    "cos" => x.cos(),
                    "exp" => x.exp(),
                    "sqrt" => x.sqrt(),
                    _ => unreachable!(),
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Model(
                "expression evaluated to a non-finite value".into(),
            ));
        }
        Ok(v)
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                if !CONSTANTS.iter().any(|(n, _)| n == name) {
                    out.insert(name.clone());
                }
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.free_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }
}

/// Recursive-descent expression parser over a byte slice; offsets feed the
/// caller's line/column error reporting.
struct ExprParser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> ExprParser<'a> {
    fn parse(text: &'a str) -> std::result::Result<Expr, (usize, String)> {
        let mut p = ExprParser {
            text: text.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        if p.pos == p.text.len() {
            return Err((0, "empty expression".into()));
        }
        let e = p.sum()?;
        p.skip_ws();
        if p.pos != p.text.len() {
            return Err((p.pos, format!("trailing input `{}`", p.rest())));
        }
        Ok(e)
    }

    fn rest(&self) -> String {
        String::from_utf8_lossy(&self.text[self.pos..]).into_owned()
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn sum(&mut self) -> std::result::Result<Expr, (usize, String)> {
        let mut acc = self.product()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.product()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.product()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn product(&mut self) -> std::result::Result<Expr, (usize, String)> {
        let mut acc = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.unary()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> std::result::Result<Expr, (usize, String)> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> std::result::Result<Expr, (usize, String)> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err((self.pos, "expected `)`".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(start),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                while self
                    .peek()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.text[start..self.pos])
                    .expect("identifier bytes are ASCII")
                    .to_owned();
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    let Some(f) = FUNCTIONS.iter().position(|&f| f == name) else {
                        return Err((start, format!("unknown function `{name}`")));
                    };
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.skip_ws();
                    if self.peek() != Some(b')') {
                        return Err((self.pos, "expected `)`".into()));
                    }
                    self.pos += 1;
                    Ok(Expr::Call(f, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(c) => Err((start, format!("unexpected character `{}`", c as char))),
            None => Err((start, "unexpected end of expression".into())),
        }
    }

    fn number(&mut self, start: usize) -> std::result::Result<Expr, (usize, String)> {
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || c == b'.')
        {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.text[start..self.pos]).expect("ASCII digits");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err((start, format!("bad number `{text}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Spec blocks
// ---------------------------------------------------------------------------

/// The lattice declared by a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    /// A single spin-1/2 site in `R^0`.
    Point,
    /// An open chain of `n` spin-1/2 sites.
    Chain(usize),
    /// An `nx × ny` grid of spin-1/2 sites.
    Grid(usize, usize),
}

impl LatticeKind {
    pub fn build(&self) -> Result<Lattice> {
        match *self {
            LatticeKind::Point => Lattice::point(),
            LatticeKind::Chain(n) => Lattice::chain(n),
            LatticeKind::Grid(nx, ny) => Lattice::grid(nx, ny),
        }
    }

    fn emit(&self) -> String {
        match *self {
            LatticeKind::Point => "point".into(),
            LatticeKind::Chain(n) => format!("chain {n}"),
            LatticeKind::Grid(nx, ny) => format!("grid {nx} {ny}"),
        }
    }

    fn site_count(&self) -> usize {
        match *self {
            LatticeKind::Point => 1,
            LatticeKind::Chain(n) => n,
            LatticeKind::Grid(nx, ny) => nx * ny,
        }
    }
}

/// The parameter mesh declared by a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshSpec {
    Point,
    Interval(usize),
    Circle(usize),
    Torus(usize, usize),
    Sphere(usize, usize),
}

impl MeshSpec {
    pub fn build(&self) -> Result<ParamMesh> {
        match *self {
            MeshSpec::Point => Ok(ParamMesh::point()),
            MeshSpec::Interval(n) => ParamMesh::interval(n),
            MeshSpec::Circle(n) => ParamMesh::circle(n),
            MeshSpec::Torus(a, b) => ParamMesh::torus2(a, b),
            MeshSpec::Sphere(a, b) => ParamMesh::sphere2(a, b),
        }
    }

    /// Coordinate names available to expressions over this mesh.
    pub fn coords(&self) -> &'static [&'static str] {
        match self {
            MeshSpec::Point => &[],
            MeshSpec::Interval(_) | MeshSpec::Circle(_) => &["s"],
            MeshSpec::Torus(_, _) => &["s1", "s2"],
            MeshSpec::Sphere(_, _) => &["nx", "ny", "nz"],
        }
    }

    /// Human-readable mesh tag used in run results.
    pub fn describe(&self) -> String {
        match *self {
            MeshSpec::Point => "point".into(),
            MeshSpec::Interval(n) => format!("interval({n})"),
            MeshSpec::Circle(n) => format!("circle({n})"),
            MeshSpec::Torus(a, b) => format!("torus2({a}x{b})"),
            MeshSpec::Sphere(a, b) => format!("sphere2({a}x{b})"),
        }
    }

    fn emit(&self) -> String {
        match *self {
            MeshSpec::Point => "point".into(),
            MeshSpec::Interval(n) => format!("interval {n}"),
            MeshSpec::Circle(n) => format!("circle {n}"),
            MeshSpec::Torus(a, b) => format!("torus {a} {b}"),
            MeshSpec::Sphere(a, b) => format!("sphere {a} {b}"),
        }
    }

    /// Apply a `--res` style override (`"64"` or `"20x40"`) keeping the
    /// mesh kind.
    pub fn with_res(&self, res: &str) -> Result<MeshSpec> {
        let parts: Vec<&str> = res.split('x').collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Model(format!("bad resolution `{res}`")))
            })
            .collect::<Result<_>>()?;
        match (*self, nums.as_slice()) {
            (MeshSpec::Interval(_), [n]) => Ok(MeshSpec::Interval(*n)),
            (MeshSpec::Circle(_), [n]) => Ok(MeshSpec::Circle(*n)),
            (MeshSpec::Torus(_, _), [a, b]) => Ok(MeshSpec::Torus(*a, *b)),
            (MeshSpec::Sphere(_, _), [a, b]) => Ok(MeshSpec::Sphere(*a, *b)),
            (MeshSpec::Point, _) => Err(Error::Model(
                "a point mesh has no resolution to override".into(),
            )),
            _ => Err(Error::Model(format!(
                "resolution `{res}` does not fit a {} mesh",
                self.describe()
            ))),
        }
    }
}

/// A site reference in a term line: literal, the running site `j`, or the
/// chain neighbour `j+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SitePattern {
    Literal(SiteId),
    J,
    JNext,
}

impl SitePattern {
    fn emit(&self) -> String {
        match self {
            SitePattern::Literal(j) => j.to_string(),
            SitePattern::J => "j".into(),
            SitePattern::JNext => "j+1".into(),
        }
    }
}

/// One `term =` or `each =` line: a coefficient expression (kept as source
/// text for byte-exact round trips) and site:op factors.
#[derive(Debug, Clone, PartialEq)]
struct TermLine {
    each: bool,
    coeff_src: String,
    coeff: Expr,
    factors: Vec<(SitePattern, String)>,
}

impl TermLine {
    fn emit(&self) -> String {
        let mut parts = vec![self.coeff_src.clone()];
        for (site, op) in &self.factors {
            parts.push(format!("{}:{op}", site.emit()));
        }
        parts.join(" ")
    }

    /// Expand into `(anchor, factors)` instances over the lattice.  `each`
    /// lines run `j` over all sites; a `j+1` factor drops the instance at
    /// an open chain end.
    fn instances(&self, lattice: &Lattice) -> Result<Vec<(SiteId, BasisString)>> {
        let n = lattice.len();
        let js: Vec<Option<SiteId>> = if self.each {
            (0..n).map(Some).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        'instance: for j in js {
            let mut factors = Vec::new();
            let mut anchor = None;
            for (pat, op) in &self.factors {
                let site = match (pat, j) {
                    (SitePattern::Literal(s), _) => *s,
                    (SitePattern::J, Some(j)) => j,
                    (SitePattern::JNext, Some(j)) => {
                        if j + 1 >= n {
                            continue 'instance;
                        }
                        j + 1
                    }
                    _ => {
                        return Err(Error::Model(
                            "site placeholder in a literal term line".into(),
                        ))
                    }
                };
                let dim = lattice.onsite_dim(site);
                let opix = parse_op_name(dim, op).ok_or_else(|| {
                    Error::Model(format!("unknown on-site operator `{op}` for dimension {dim}"))
                })?;
                anchor.get_or_insert(site);
                factors.push((site, opix));
            }
            let anchor = anchor.ok_or_else(|| {
                Error::Model("a term needs at least one site:op factor".into())
            })?;
            out.push((anchor, BasisString::new(factors)?));
        }
        Ok(out)
    }
}

/// A named parameter definition.
#[derive(Debug, Clone, PartialEq)]
struct Parameter {
    name: String,
    src: String,
    expr: Expr,
}

/// The symmetry block: a group id and the charge-density term lines.
#[derive(Debug, Clone, PartialEq)]
struct SymmetryBlock {
    group: String,
    terms: Vec<TermLine>,
}

/// Built-in families that cannot be written as coefficient×string terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinFamily {
    /// Partial-swap translation pump on the 8-site ring.
    TranslationPump,
    /// Uncorrelated U(1) paramagnet on the 3×3 grid (factorized backend).
    ProductGridU1,
}

impl BuiltinFamily {
    fn name(&self) -> &'static str {
        match self {
            BuiltinFamily::TranslationPump => "translation-pump",
            BuiltinFamily::ProductGridU1 => "product-2d-u1",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "translation-pump" => Some(BuiltinFamily::TranslationPump),
            "product-2d-u1" => Some(BuiltinFamily::ProductGridU1),
            _ => None,
        }
    }
}

/// The family block: mesh, optional built-in binding, and sampling knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyBlock {
    mesh: Option<MeshSpec>,
    builtin: Option<BuiltinFamily>,
    reps: Option<usize>,
    gap_fraction: Option<f64>,
}

impl FamilyBlock {
    fn is_empty(&self) -> bool {
        self.mesh.is_none()
            && self.builtin.is_none()
            && self.reps.is_none()
            && self.gap_fraction.is_none()
    }
}

/// The task block: invariant selection and per-task knobs, all optional
/// with pinned defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBlock {
    invariant: Option<String>,
    seed: Option<u64>,
    cases: Option<usize>,
    quadrature: Option<usize>,
    apex: Option<f64>,
    window: Option<f64>,
    hall_apex: Option<[f64; 2]>,
    angles: Option<[f64; 3]>,
    probe: Option<String>,
    times: Option<Vec<f64>>,
    max_sep: Option<f64>,
    tol_mc: Option<f64>,
    tol_cycle: Option<f64>,
    tol_partition: Option<f64>,
}

impl TaskBlock {
    fn is_empty(&self) -> bool {
        self == &TaskBlock::default()
    }

    pub fn invariant(&self) -> Option<&str> {
        self.invariant.as_deref()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn cases(&self) -> usize {
        self.cases.unwrap_or(20)
    }

    pub fn quadrature(&self) -> usize {
        self.quadrature.unwrap_or(24)
    }

    pub fn apex(&self) -> f64 {
        self.apex.unwrap_or(PUMP_APEX)
    }

    pub fn window(&self) -> f64 {
        self.window.unwrap_or(PUMP_WINDOW)
    }

    pub fn hall_apex(&self) -> [f64; 2] {
        self.hall_apex.unwrap_or([1.37, 1.29])
    }

    pub fn angles(&self) -> [f64; 3] {
        let pi = std::f64::consts::PI;
        self.angles
            .unwrap_or([0.5 * pi, 7.0 * pi / 6.0, 11.0 * pi / 6.0])
    }

    pub fn probe(&self) -> Option<&str> {
        self.probe.as_deref()
    }

    pub fn times(&self) -> Vec<f64> {
        self.times
            .clone()
            .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 1.0, 2.0])
    }

    pub fn max_sep(&self) -> Option<f64> {
        self.max_sep
    }

    pub fn tol_mc(&self, default: f64) -> f64 {
        self.tol_mc.unwrap_or(default)
    }

    pub fn tol_cycle(&self, default: f64) -> f64 {
        self.tol_cycle.unwrap_or(default)
    }

    pub fn tol_partition(&self, default: f64) -> f64 {
        self.tol_partition.unwrap_or(default)
    }
}

impl Default for TaskBlock {
    fn default() -> Self {
        TaskBlock {
            invariant: None,
            seed: None,
            cases: None,
            quadrature: None,
            apex: None,
            window: None,
            hall_apex: None,
            angles: None,
            probe: None,
            times: None,
            max_sep: None,
            tol_mc: None,
            tol_cycle: None,
            tol_partition: None,
        }
    }
}

/// The tasks a model can drive.
pub const INVARIANT_NAMES: &[&str] = &[
    "check-complex",
    "currents",
    "lr-probe",
    "berry",
    "hall",
    "pump",
];

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

/// A fully validated model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    name: Option<String>,
    lattice: LatticeKind,
    parameters: Vec<Parameter>,
    hamiltonian: Vec<TermLine>,
    symmetry: Option<SymmetryBlock>,
    family: FamilyBlock,
    task: TaskBlock,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<ModelSpec> {
        parse_model(text)
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed")
    }

    pub fn lattice_kind(&self) -> LatticeKind {
        self.lattice
    }

    pub fn lattice(&self) -> Result<Lattice> {
        self.lattice.build()
    }

    pub fn task(&self) -> &TaskBlock {
        &self.task
    }

    pub fn builtin(&self) -> Option<BuiltinFamily> {
        self.family.builtin
    }

    /// Declared mesh, defaulting to the point mesh.
    pub fn mesh_spec(&self) -> MeshSpec {
        self.family.mesh.unwrap_or(MeshSpec::Point)
    }

    pub fn gap_fraction(&self) -> f64 {
        self.family.gap_fraction.unwrap_or(DESCENT_GAP_FRACTION)
    }

    /// Canonical re-serialization: fixed section and key order, original
    /// expression sources, shortest-round-trip numerals.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut sections: Vec<String> = Vec::new();
        if let Some(name) = &self.name {
            sections.push(format!("[model]\nname = {name}\n"));
        }
        sections.push(format!("[lattice]\nkind = {}\n", self.lattice.emit()));
        if !self.parameters.is_empty() {
            let mut s = String::from("[parameters]\n");
            for p in &self.parameters {
                let _ = writeln!(s, "{} = {}", p.name, p.src);
            }
            sections.push(s);
        }
        if !self.hamiltonian.is_empty() {
            let mut s = String::from("[hamiltonian]\n");
            for t in &self.hamiltonian {
                let key = if t.each { "each" } else { "term" };
                let _ = writeln!(s, "{key} = {}", t.emit());
            }
            sections.push(s);
        }
        if let Some(sym) = &self.symmetry {
            let mut s = String::from("[symmetry]\n");
            let _ = writeln!(s, "group = {}", sym.group);
            for t in &sym.terms {
                let key = if t.each { "each" } else { "term" };
                let _ = writeln!(s, "{key} = {}", t.emit());
            }
            sections.push(s);
        }
        if !self.family.is_empty() {
            let mut s = String::from("[family]\n");
            if let Some(mesh) = &self.family.mesh {
                let _ = writeln!(s, "mesh = {}", mesh.emit());
            }
            if let Some(b) = &self.family.builtin {
                let _ = writeln!(s, "builtin = {}", b.name());
            }
            if let Some(r) = self.family.reps {
                let _ = writeln!(s, "reps = {r}");
            }
            if let Some(g) = self.family.gap_fraction {
                let _ = writeln!(s, "gap-fraction = {g}");
            }
            sections.push(s);
        }
        if !self.task.is_empty() {
            let t = &self.task;
            let mut s = String::from("[task]\n");
            if let Some(v) = &t.invariant {
                let _ = writeln!(s, "invariant = {v}");
            }
            if let Some(v) = t.seed {
                let _ = writeln!(s, "seed = {v}");
            }
            if let Some(v) = t.cases {
                let _ = writeln!(s, "cases = {v}");
            }
            if let Some(v) = t.quadrature {
                let _ = writeln!(s, "quadrature = {v}");
            }
            if let Some(v) = t.apex {
                let _ = writeln!(s, "apex = {v}");
            }
            if let Some(v) = t.window {
                let _ = writeln!(s, "window = {v}");
            }
            if let Some([a, b]) = t.hall_apex {
                let _ = writeln!(s, "hall-apex = {a} {b}");
            }
            if let Some([a, b, c]) = t.angles {
                let _ = writeln!(s, "angles = {a} {b} {c}");
            }
            if let Some(v) = &t.probe {
                let _ = writeln!(s, "probe = {v}");
            }
            if let Some(v) = &t.times {
                let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(s, "times = {}", row.join(" "));
            }
            if let Some(v) = t.max_sep {
                let _ = writeln!(s, "max-sep = {v}");
            }
            if let Some(v) = t.tol_mc {
                let _ = writeln!(s, "tol-mc = {v}");
            }
            if let Some(v) = t.tol_cycle {
                let _ = writeln!(s, "tol-cycle = {v}");
            }
            if let Some(v) = t.tol_partition {
                let _ = writeln!(s, "tol-partition = {v}");
            }
            sections.push(s);
        }
        for (i, s) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(s);
        }
        out
    }

    /// SHA-256 of the canonical serialization, in lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.emit().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    /// Evaluate the parameter environment at a mesh point.
    fn env_at(&self, coords: &[&'static str], point: &[f64]) -> Result<Vec<(String, f64)>> {
        if coords.len() != point.len() {
            return Err(Error::Model(format!(
                "mesh point has {} coordinates; expected {}",
                point.len(),
                coords.len()
            )));
        }
        let mut env: Vec<(String, f64)> = coords
            .iter()
            .zip(point)
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        for p in &self.parameters {
            let v = p.expr.eval(&env)?;
            env.push((p.name.clone(), v));
        }
        Ok(env)
    }

    /// The ASA Hamiltonian density at a mesh point (expression models).
    pub fn density_at(&self, mesh: &MeshSpec, point: &[f64]) -> Result<Chain> {
        if self.hamiltonian.is_empty() {
            return Err(Error::Model("the model has no hamiltonian terms".into()));
        }
        let lattice = self.lattice.build()?;
        let env = self.env_at(mesh.coords(), point)?;
        assemble_density(&self.hamiltonian, &lattice, &env)
    }

    /// The ASA charge density and group id from the symmetry block.
    pub fn charge(&self) -> Result<Option<(Chain, String)>> {
        let Some(sym) = &self.symmetry else {
            return Ok(None);
        };
        let lattice = self.lattice.build()?;
        let env: Vec<(String, f64)> = Vec::new();
        let chain = assemble_density(&sym.terms, &lattice, &env)?;
        Ok(Some((chain, sym.group.clone())))
    }

    /// Resolve the model into a runnable family over `mesh`.
    pub fn resolve_family(&self, mesh: MeshSpec) -> Result<ResolvedFamily> {
        match self.family.builtin {
            Some(BuiltinFamily::TranslationPump) => {
                let reps = self.family.reps.unwrap_or(1);
                Ok(ResolvedFamily::Pump(TranslationPump::new(reps)?))
            }
            Some(BuiltinFamily::ProductGridU1) => {
                Ok(ResolvedFamily::Grid(ProductGridU1::new()?))
            }
            None => Ok(ResolvedFamily::Expression(ExpressionFamily::new(
                self, mesh,
            )?)),
        }
    }
}

fn assemble_density(
    terms: &[TermLine],
    lattice: &Lattice,
    env: &[(String, f64)],
) -> Result<Chain> {
    let mut per_site: Vec<LocalOperator> = vec![LocalOperator::zero(); lattice.len()];
    for term in terms {
        let coeff = term.coeff.eval(env)?;
        for (anchor, string) in term.instances(lattice)? {
            per_site[anchor].add_term(string, Complex64::new(0.0, coeff));
        }
    }
    let mut chain = Chain::new(0)?;
    for (j, op) in per_site.into_iter().enumerate() {
        if !op.is_zero() {
            chain.set(&[j], &op)?;
        }
    }
    Ok(chain)
}

// ---------------------------------------------------------------------------
// Families from specs
// ---------------------------------------------------------------------------

/// A model whose Hamiltonian terms are coefficient expressions over the
/// mesh coordinates; contexts use the dense spectral backend.
pub struct ExpressionFamily {
    spec: ModelSpec,
    mesh: MeshSpec,
    lattice: Lattice,
}

impl ExpressionFamily {
    pub fn new(spec: &ModelSpec, mesh: MeshSpec) -> Result<Self> {
        if spec.hamiltonian.is_empty() {
            return Err(Error::Model(
                "the model has no hamiltonian terms to build a family from".into(),
            ));
        }
        Ok(ExpressionFamily {
            spec: spec.clone(),
            mesh,
            lattice: spec.lattice.build()?,
        })
    }
}

impl Family for ExpressionFamily {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        self.spec.density_at(&self.mesh, point)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        let h = crate::complex::boundary_zero(&self.density(point)?, &self.lattice)?
            .total()
            .scale(Complex64::new(0.0, -1.0));
        Ok(SpectralContext::diagonalize(&h, &self.lattice)?.into())
    }
}

/// A model resolved into one of the runnable family backends.
pub enum ResolvedFamily {
    Expression(ExpressionFamily),
    Pump(TranslationPump),
    Grid(ProductGridU1),
}

impl ResolvedFamily {
    pub fn as_family(&self) -> &dyn Family {
        match self {
            ResolvedFamily::Expression(f) => f,
            ResolvedFamily::Pump(f) => f,
            ResolvedFamily::Grid(f) => f,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse and validate a model file, reporting errors with line and column.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    Parser::new(text).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Model,
    Lattice,
    Parameters,
    Hamiltonian,
    Symmetry,
    Family,
    Task,
}

struct Parser<'a> {
    text: &'a str,
    section: Section,
    name: Option<String>,
    lattice: Option<LatticeKind>,
    lattice_line: usize,
    parameters: Vec<Parameter>,
    hamiltonian: Vec<TermLine>,
    hamiltonian_line: usize,
    group: Option<String>,
    charge_terms: Vec<TermLine>,
    symmetry_line: usize,
    family: FamilyBlock,
    family_line: usize,
    task: TaskBlock,
}

fn err_at(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::ModelAt {
        line,
        column,
        message: message.into(),
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            section: Section::None,
            name: None,
            lattice: None,
            lattice_line: 0,
            parameters: Vec::new(),
            hamiltonian: Vec::new(),
            hamiltonian_line: 0,
            group: None,
            charge_terms: Vec::new(),
            symmetry_line: 0,
            family: FamilyBlock {
                mesh: None,
                builtin: None,
                reps: None,
                gap_fraction: None,
            },
            family_line: 0,
            task: TaskBlock::default(),
        }
    }

    fn run(mut self) -> Result<ModelSpec> {
        for (idx, raw) in self.text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("");
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(stripped) = trimmed.strip_prefix('[') {
                let col = line.find('[').map_or(1, |p| p + 1);
                let Some(name) = stripped.strip_suffix(']') else {
                    return Err(err_at(lineno, col, "unterminated section header"));
                };
                self.section = match name.trim() {
                    "model" => Section::Model,
                    "lattice" => Section::Lattice,
                    "parameters" => Section::Parameters,
                    "hamiltonian" => Section::Hamiltonian,
                    "symmetry" => Section::Symmetry,
                    "family" => Section::Family,
                    "task" => Section::Task,
                    other => {
                        return Err(err_at(lineno, col, format!("unknown section `[{other}]`")))
                    }
                };
                match self.section {
                    Section::Hamiltonian => self.hamiltonian_line = lineno,
                    Section::Symmetry => self.symmetry_line = lineno,
                    Section::Family => self.family_line = lineno,
                    _ => {}
                }
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(err_at(
                    lineno,
                    line.len() - line.trim_start().len() + 1,
                    "expected `key = value` or a `[section]` header",
                ));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let key_col = line.find(key).map_or(1, |p| p + 1);
            let value_col = if value.is_empty() {
                eq + 2
            } else {
                line[eq + 1..].find(value).map_or(eq + 2, |p| eq + 1 + p + 1)
            };
            if value.is_empty() {
                return Err(err_at(lineno, value_col, format!("key `{key}` has no value")));
            }
            self.entry(lineno, key, key_col, value, value_col)?;
        }
        self.finish()
    }

    fn entry(
        &mut self,
        line: usize,
        key: &str,
        key_col: usize,
        value: &str,
        value_col: usize,
    ) -> Result<()> {
        let unknown = |section: &str| {
            Err(err_at(
                line,
                key_col,
                format!("unknown key `{key}` in [{section}]"),
            ))
        };
        match self.section {
            Section::None => Err(err_at(
                line,
                key_col,
                "key outside any section; start with a `[section]` header",
            )),
            Section::Model => match key {
                "name" => {
                    if self.name.is_some() {
                        return Err(err_at(line, key_col, "duplicate `name`"));
                    }
                    if value.is_empty()
                        || !value
                            .chars()
                            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
                    {
                        return Err(err_at(
                            line,
                            value_col,
                            "model names use only letters, digits, `-`, `_`",
                        ));
                    }
                    self.name = Some(value.to_string());
                    Ok(())
                }
                _ => unknown("model"),
            },
            Section::Lattice => match key {
                "kind" => {
                    if self.lattice.is_some() {
                        return Err(err_at(line, key_col, "duplicate `kind`"));
                    }
                    self.lattice = Some(self.lattice_kind(line, value, value_col)?);
                    self.lattice_line = line;
                    Ok(())
                }
                _ => unknown("lattice"),
            },
            Section::Parameters => {
                if !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
                    || key.starts_with(|c: char| c.is_ascii_digit())
                    || key.is_empty()
                {
                    return Err(err_at(
                        line,
                        key_col,
                        format!("bad parameter name `{key}`"),
                    ));
                }
                if CONSTANTS.iter().any(|(n, _)| *n == key)
                    || FUNCTIONS.contains(&key)
                {
                    return Err(err_at(
                        line,
                        key_col,
                        format!("`{key}` is a reserved name"),
                    ));
                }
                if self.parameters.iter().any(|p| p.name == key) {
                    return Err(err_at(
                        line,
                        key_col,
                        format!("duplicate parameter `{key}`"),
                    ));
                }
                let expr = self.expression(line, value, value_col)?;
                self.parameters.push(Parameter {
                    name: key.to_string(),
                    src: value.to_string(),
                    expr,
                });
                Ok(())
            }
            Section::Hamiltonian => match key {
                "term" | "each" => {
                    let t = self.term_line(line, key == "each", value, value_col)?;
                    self.hamiltonian.push(t);
                    Ok(())
                }
                _ => unknown("hamiltonian"),
            },
            Section::Symmetry => match key {
                "group" => {
                    if self.group.is_some() {
                        return Err(err_at(line, key_col, "duplicate `group`"));
                    }
                    if value != "u1" {
                        return Err(err_at(
                            line,
                            value_col,
                            format!("unsupported symmetry group `{value}`; only `u1`"),
                        ));
                    }
                    self.group = Some(value.to_string());
                    Ok(())
                }
                "term" | "each" => {
                    let t = self.term_line(line, key == "each", value, value_col)?;
                    let mut free = BTreeSet::new();
                    t.coeff.free_vars(&mut free);
                    if let Some(name) = free.iter().next() {
                        return Err(err_at(
                            line,
                            value_col,
                            format!(
                                "charge coefficients must be constant; `{name}` is not"
                            ),
                        ));
                    }
                    self.charge_terms.push(t);
                    Ok(())
                }
                _ => unknown("symmetry"),
            },
            Section::Family => match key {
                "mesh" => {
                    if self.family.mesh.is_some() {
                        return Err(err_at(line, key_col, "duplicate `mesh`"));
                    }
                    self.family.mesh = Some(self.mesh_spec(line, value, value_col)?);
                    Ok(())
                }
                "builtin" => {
                    if self.family.builtin.is_some() {
                        return Err(err_at(line, key_col, "duplicate `builtin`"));
                    }
                    let Some(b) = BuiltinFamily::from_name(value) else {
                        return Err(err_at(
                            line,
                            value_col,
                            format!("unknown builtin family `{value}`"),
                        ));
                    };
                    self.family.builtin = Some(b);
                    Ok(())
                }
                "reps" => {
                    if self.family.reps.is_some() {
                        return Err(err_at(line, key_col, "duplicate `reps`"));
                    }
                    let r: usize = self.integer(line, value, value_col)?;
                    if r == 0 {
                        return Err(err_at(line, value_col, "`reps` must be at least 1"));
                    }
                    self.family.reps = Some(r);
                    Ok(())
                }
                "gap-fraction" => {
                    if self.family.gap_fraction.is_some() {
                        return Err(err_at(line, key_col, "duplicate `gap-fraction`"));
                    }
                    let g = self.float(line, value, value_col)?;
                    if !(g > 0.0 && g <= 0.5) {
                        return Err(err_at(
                            line,
                            value_col,
                            "`gap-fraction` must lie in (0, 1/2]",
                        ));
                    }
                    self.family.gap_fraction = Some(g);
                    Ok(())
                }
                _ => unknown("family"),
            },
            Section::Task => self.task_entry(line, key, key_col, value, value_col),
        }
    }

    fn task_entry(
        &mut self,
        line: usize,
        key: &str,
        key_col: usize,
        value: &str,
        value_col: usize,
    ) -> Result<()> {
        macro_rules! set_once {
            ($field:ident, $value:expr) => {{
                if self.task.$field.is_some() {
                    return Err(err_at(line, key_col, format!("duplicate `{key}`")));
                }
                self.task.$field = Some($value);
                Ok(())
            }};
        }
        match key {
            "invariant" => {
                if !INVARIANT_NAMES.contains(&value) {
                    return Err(err_at(
                        line,
                        value_col,
                        format!(
                            "unknown invariant `{value}`; one of {}",
                            INVARIANT_NAMES.join(", ")
                        ),
                    ));
                }
                set_once!(invariant, value.to_string())
            }
            "seed" => {
                let v = value.parse::<u64>().map_err(|_| {
                    err_at(line, value_col, format!("bad seed `{value}`"))
                })?;
                set_once!(seed, v)
            }
            "cases" => {
                let v: usize = self.integer(line, value, value_col)?;
                if v == 0 {
                    return Err(err_at(line, value_col, "`cases` must be positive"));
                }
                set_once!(cases, v)
            }
            "quadrature" => {
                let v: usize = self.integer(line, value, value_col)?;
                if v < 2 {
                    return Err(err_at(line, value_col, "`quadrature` needs at least 2 nodes"));
                }
                set_once!(quadrature, v)
            }
            "apex" => {
                let v = self.float(line, value, value_col)?;
                set_once!(apex, v)
            }
            "window" => {
                let v = self.float(line, value, value_col)?;
                if v <= 0.0 {
                    return Err(err_at(line, value_col, "`window` must be positive"));
                }
                set_once!(window, v)
            }
            "hall-apex" => {
                let v = self.float_list(line, value, value_col)?;
                let [a, b] = v.as_slice() else {
                    return Err(err_at(line, value_col, "`hall-apex` wants two numbers"));
                };
                set_once!(hall_apex, [*a, *b])
            }
            "angles" => {
                let v = self.float_list(line, value, value_col)?;
                let [a, b, c] = v.as_slice() else {
                    return Err(err_at(line, value_col, "`angles` wants three numbers"));
                };
                set_once!(angles, [*a, *b, *c])
            }
            "probe" => set_once!(probe, value.to_string()),
            "times" => {
                let v = self.float_list(line, value, value_col)?;
                if v.is_empty() {
                    return Err(err_at(line, value_col, "`times` must not be empty"));
                }
                set_once!(times, v)
            }
            "max-sep" => {
                let v = self.float(line, value, value_col)?;
                if v <= 0.0 {
                    return Err(err_at(line, value_col, "`max-sep` must be positive"));
                }
                set_once!(max_sep, v)
            }
            "tol-mc" | "tol-cycle" | "tol-partition" => {
                let v = self.float(line, value, value_col)?;
                if v <= 0.0 {
                    return Err(err_at(line, value_col, format!("`{key}` must be positive")));
                }
                match key {
                    "tol-mc" => set_once!(tol_mc, v),
                    "tol-cycle" => set_once!(tol_cycle, v),
                    _ => set_once!(tol_partition, v),
                }
            }
            _ => Err(err_at(
                line,
                key_col,
                format!("unknown key `{key}` in [task]"),
            )),
        }
    }

    fn integer(&self, line: usize, value: &str, col: usize) -> Result<usize> {
        value
            .parse::<usize>()
            .map_err(|_| err_at(line, col, format!("bad integer `{value}`")))
    }

    fn float(&self, line: usize, value: &str, col: usize) -> Result<f64> {
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(err_at(line, col, format!("bad number `{value}`"))),
        }
    }

    fn float_list(&self, line: usize, value: &str, col: usize) -> Result<Vec<f64>> {
        value
            .split_whitespace()
            .map(|f| self.float(line, f, col + value.find(f).unwrap_or(0)))
            .collect()
    }

    fn expression(&self, line: usize, value: &str, col: usize) -> Result<Expr> {
        ExprParser::parse(value).map_err(|(off, msg)| err_at(line, col + off, msg))
    }

    fn lattice_kind(&self, line: usize, value: &str, col: usize) -> Result<LatticeKind> {
        let fields: Vec<&str> = value.split_whitespace().collect();
        match fields.as_slice() {
            ["point"] => Ok(LatticeKind::Point),
            ["chain", n] => Ok(LatticeKind::Chain(self.integer(line, n, col)?)),
            ["grid", nx, ny] => Ok(LatticeKind::Grid(
                self.integer(line, nx, col)?,
                self.integer(line, ny, col)?,
            )),
            _ => Err(err_at(
                line,
                col,
                format!("bad lattice kind `{value}`; want `point`, `chain N`, or `grid NX NY`"),
            )),
        }
    }

    fn mesh_spec(&self, line: usize, value: &str, col: usize) -> Result<MeshSpec> {
        let fields: Vec<&str> = value.split_whitespace().collect();
        match fields.as_slice() {
            ["point"] => Ok(MeshSpec::Point),
            ["interval", n] => Ok(MeshSpec::Interval(self.integer(line, n, col)?)),
            ["circle", n] => Ok(MeshSpec::Circle(self.integer(line, n, col)?)),
            ["torus", a, b] => Ok(MeshSpec::Torus(
                self.integer(line, a, col)?,
                self.integer(line, b, col)?,
            )),
            ["sphere", a, b] => Ok(MeshSpec::Sphere(
                self.integer(line, a, col)?,
                self.integer(line, b, col)?,
            )),
            _ => Err(err_at(
                line,
                col,
                format!(
                    "bad mesh `{value}`; want `point`, `interval N`, `circle N`, \
                     `torus A B`, or `sphere A B`"
                ),
            )),
        }
    }

    fn term_line(
        &self,
        line: usize,
        each: bool,
        value: &str,
        col: usize,
    ) -> Result<TermLine> {
        let mut fields = value.split_whitespace();
        let coeff_src = fields.next().expect("value is non-empty").to_string();
        let coeff_col = col + value.find(&coeff_src).unwrap_or(0);
        let coeff = self.expression(line, &coeff_src, coeff_col)?;
        let mut factors = Vec::new();
        for field in fields {
            let field_col = col + value.find(field).unwrap_or(0);
            let Some((site_text, op_text)) = field.split_once(':') else {
                return Err(err_at(
                    line,
                    field_col,
                    format!("bad factor `{field}`; want site:op"),
                ));
            };
            let pat = match site_text {
                "j" => SitePattern::J,
                "j+1" => SitePattern::JNext,
                _ => SitePattern::Literal(site_text.parse::<usize>().map_err(|_| {
                    err_at(line, field_col, format!("bad site `{site_text}`"))
                })?),
            };
            if matches!(pat, SitePattern::J | SitePattern::JNext) && !each {
                return Err(err_at(
                    line,
                    field_col,
                    "site placeholders `j`/`j+1` belong in `each` lines",
                ));
            }
            if op_text.is_empty() {
                return Err(err_at(line, field_col, "empty operator name"));
            }
            factors.push((pat, op_text.to_string()));
        }
        if factors.is_empty() {
            return Err(err_at(
                line,
                col,
                "a term needs at least one site:op factor",
            ));
        }
        Ok(TermLine {
            each,
            coeff_src,
            coeff,
            factors,
        })
    }

    fn finish(self) -> Result<ModelSpec> {
        let Some(lattice) = self.lattice else {
            return Err(Error::Model(
                "the model declares no lattice ([lattice] kind = ...)".into(),
            ));
        };
        let sites = lattice.site_count();
        let chain_lattice = matches!(lattice, LatticeKind::Chain(_));

        let check_terms = |terms: &[TermLine], block_line: usize| -> Result<()> {
            for t in terms {
                for (pat, op) in &t.factors {
                    match pat {
                        SitePattern::Literal(j) => {
                            if *j >= sites {
                                return Err(err_at(
                                    block_line,
                                    1,
                                    format!(
                                        "term references site {j}, but the lattice has \
                                         sites 0..{sites}"
                                    ),
                                ));
                            }
                        }
                        SitePattern::JNext => {
                            if !chain_lattice {
                                return Err(err_at(
                                    block_line,
                                    1,
                                    "`j+1` factors need a chain lattice",
                                ));
                            }
                        }
                        SitePattern::J => {}
                    }
                    // All lattices here are spin-1/2; op names resolve
                    // against the on-site dimension.
                    if parse_op_name(2, op).is_none() {
                        return Err(err_at(
                            block_line,
                            1,
                            format!("unknown on-site operator `{op}`"),
                        ));
                    }
                }
            }
            Ok(())
        };
        check_terms(&self.hamiltonian, self.hamiltonian_line)?;
        check_terms(&self.charge_terms, self.symmetry_line)?;

        let symmetry = match (self.group, self.charge_terms.is_empty()) {
            (Some(group), false) => Some(SymmetryBlock {
                group,
                terms: self.charge_terms,
            }),
            (Some(_), true) => {
                return Err(err_at(
                    self.symmetry_line,
                    1,
                    "the symmetry block declares a group but no charge terms",
                ))
            }
            (None, false) => {
                return Err(err_at(
                    self.symmetry_line,
                    1,
                    "charge terms need a `group = u1` line",
                ))
            }
            (None, true) => None,
        };

        if let Some(builtin) = self.family.builtin {
            if !self.hamiltonian.is_empty() {
                return Err(err_at(
                    self.family_line,
                    1,
                    "a builtin family and an explicit [hamiltonian] block conflict",
                ));
            }
            let want = match builtin {
                BuiltinFamily::TranslationPump => {
                    LatticeKind::Chain(crate::families::PUMP_SITES)
                }
                BuiltinFamily::ProductGridU1 => LatticeKind::Grid(3, 3),
            };
            if lattice != want {
                return Err(err_at(
                    self.family_line,
                    1,
                    format!(
                        "builtin `{}` runs on `{}`, not `{}`",
                        builtin.name(),
                        want.emit(),
                        lattice.emit()
                    ),
                ));
            }
        } else if self.family.reps.is_some() {
            return Err(err_at(
                self.family_line,
                1,
                "`reps` only binds a builtin family",
            ));
        }

        // Expressions may reference pi, the mesh coordinates, and earlier
        // parameters.
        let mesh = self.family.mesh.unwrap_or(MeshSpec::Point);
        let coords = mesh.coords();
        let mut known: BTreeSet<String> = coords.iter().map(|c| c.to_string()).collect();
        for p in &self.parameters {
            let mut free = BTreeSet::new();
            p.expr.free_vars(&mut free);
            for name in free {
                if !known.contains(&name) {
                    return Err(Error::Model(format!(
                        "parameter `{}` references unknown name `{name}`",
                        p.name
                    )));
                }
            }
            known.insert(p.name.clone());
        }
        for t in &self.hamiltonian {
            let mut free = BTreeSet::new();
            t.coeff.free_vars(&mut free);
            for name in free {
                if !known.contains(&name) {
                    return Err(err_at(
                        self.hamiltonian_line,
                        1,
                        format!("term coefficient references unknown name `{name}`"),
                    ));
                }
            }
        }

        let spec = ModelSpec {
            name: self.name,
            lattice,
            parameters: self.parameters,
            hamiltonian: self.hamiltonian,
            symmetry,
            family: self.family,
            task: self.task,
        };

        // The probe, if declared, must parse as operator text on this
        // lattice.
        if let Some(probe) = &spec.task.probe {
            let lat = spec.lattice.build()?;
            parse_operator(probe, &lat).map_err(|e| {
                Error::Model(format!("bad task probe `{probe}`: {e}"))
            })?;
        }
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// Built-in model library
// ---------------------------------------------------------------------------

/// Names of the models shipped with the crate, resolvable by
/// [`builtin_model`] and by the CLI's `--model` flag.
pub const BUILTIN_MODEL_NAMES: &[&str] = &[
    "spin-half-sphere",
    "translation-pump",
    "product-2d-u1",
    "tfim-chain",
    "heisenberg-2site",
];

/// Look up a built-in model text by name.
pub fn builtin_model(name: &str) -> Option<&'static str> {
    match name {
        "spin-half-sphere" => Some(SPIN_HALF_SPHERE),
        "translation-pump" => Some(TRANSLATION_PUMP),
        "product-2d-u1" => Some(PRODUCT_2D_U1),
        "tfim-chain" => Some(TFIM_CHAIN),
        "heisenberg-2site" => Some(HEISENBERG_2SITE),
        _ => None,
    }
}

/// A single spin-1/2 in a unit Zeeman field swept over the sphere of field
/// directions; the ground band carries unit Chern number.
pub const SPIN_HALF_SPHERE: &str = "\
# One spin-1/2 in a unit field; the Berry integral over the sphere of
# field directions is -2*pi*i (Chern number 1, winding -1 in this
# orientation convention).
[model]
name = spin-half-sphere

[lattice]
kind = point

[hamiltonian]
term = -nx/2 0:x
term = -ny/2 0:y
term = -nz/2 0:z

[family]
mesh = sphere 20 40

[task]
invariant = berry
tol-mc = 0.02
tol-cycle = 0.001
";

/// A charge lump walked once around an 8-site ring by partial-swap circuit
/// segments; pumps one unit of charge through any cut per period.
pub const TRANSLATION_PUMP: &str = "\
# Thouless pump: one full lattice translation per period via partial-swap
# layers on a ring of 8 sites, charge sigma^z/2 per site.
[model]
name = translation-pump

[lattice]
kind = chain 8

[symmetry]
group = u1
each = 0.5 j:z

[family]
mesh = circle 64
builtin = translation-pump
reps = 1

[task]
invariant = pump
apex = 4
window = 2.5
tol-mc = 0.0000001
tol-cycle = 0.000000001
tol-partition = 0.000001
";

/// An uncorrelated paramagnet on a 3×3 grid with on-site U(1) charge; the
/// Hall conductance vanishes identically.
pub const PRODUCT_2D_U1: &str = "\
# Product-state U(1) paramagnet on a 3x3 grid; sigma^(2) = 0.
[model]
name = product-2d-u1

[lattice]
kind = grid 3 3

[symmetry]
group = u1
each = 0.5 j:z

[family]
mesh = point
builtin = product-2d-u1

[task]
invariant = hall
hall-apex = 1.37 1.29
angles = 1.5707963267948966 3.665191429188092 5.759586531581287
tol-mc = 0.00000001
tol-cycle = 0.000000001
tol-partition = 0.000001
";

/// The paramagnetic transverse-field Ising chain used by the dynamics and
/// current tasks.
pub const TFIM_CHAIN: &str = "\
# Transverse-field Ising chain, paramagnetic side (g = 1.5): currents,
# Lieb-Robinson probes, and complex self-checks.
[model]
name = tfim-chain

[lattice]
kind = chain 8

[parameters]
g = 1.5

[hamiltonian]
each = -g j:x
each = -1 j:z j+1:z

[task]
seed = 7
probe = 1 0:z
times = 0 0.25 0.5 1 2
tol-mc = 0.000000000001
";

/// The two-site Heisenberg exchange; the smallest interacting model, with
/// a conserved on-site U(1) charge.
pub const HEISENBERG_2SITE: &str = "\
# Two-site Heisenberg exchange H = (sigma_0 . sigma_1)/4 with conserved
# total sigma^z; filter and current checks.
[model]
name = heisenberg-2site

[lattice]
kind = chain 2

[hamiltonian]
term = 0.25 0:x 1:x
term = 0.25 0:y 1:y
term = 0.25 0:z 1:z

[symmetry]
group = u1
each = 0.5 j:z

[task]
seed = 11
tol-mc = 0.000000000001
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_one_site_model_parses() {
        let spec = parse_model("[lattice]\nkind = point\n[hamiltonian]\nterm = -0.5 0:z\n")
            .unwrap();
        assert_eq!(spec.lattice_kind(), LatticeKind::Point);
        assert_eq!(spec.lattice().unwrap().len(), 1);
        let density = spec.density_at(&MeshSpec::Point, &[]).unwrap();
        let op = density.get(&[0]);
        assert_eq!(op.terms().count(), 1);
    }

    #[test]
    fn missing_site_is_named_in_the_error() {
        let err = parse_model("[lattice]\nkind = chain 3\n[hamiltonian]\nterm = 1 5:z\n")
            .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("site 5"), "error was: {text}");
        assert!(text.contains("0..3"), "error was: {text}");
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = parse_model("[lattice]\nkind = hexagon 4\n").unwrap_err();
        match err {
            Error::ModelAt { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column >= 8, "column {column}");
            }
            other => panic!("expected positioned error, got {other}"),
        }
    }

    #[test]
    fn builtins_parse_emit_and_reparse_equal() {
        for name in BUILTIN_MODEL_NAMES {
            let text = builtin_model(name).unwrap();
            let spec = parse_model(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(spec.name(), *name);
            let emitted = spec.emit();
            let back = parse_model(&emitted).unwrap_or_else(|e| panic!("{name} emit: {e}"));
            assert_eq!(spec, back, "round trip of {name}");
            assert_eq!(spec.hash(), back.hash());
        }
    }

    #[test]
    fn expression_parameters_evaluate_over_mesh_coords() {
        let text = "[lattice]\nkind = chain 2\n\
                    [parameters]\ng = 1+s*s\n\
                    [hamiltonian]\neach = -g j:x\n\
                    [family]\nmesh = interval 4\n";
        let spec = parse_model(text).unwrap();
        let density = spec.density_at(&MeshSpec::Interval(4), &[0.5]).unwrap();
        let op = density.get(&[0]);
        let (_, coeff) = op.terms().next().unwrap();
        assert!((coeff.im - (-1.25)).abs() < 1e-15);
        assert_eq!(coeff.re, 0.0);
    }

    #[test]
    fn unknown_names_and_bad_expressions_are_rejected() {
        let bad = parse_model(
            "[lattice]\nkind = chain 2\n[hamiltonian]\neach = -q j:x\n",
        )
        .unwrap_err();
        assert!(bad.to_string().contains("unknown name `q`"), "{bad}");

        let bad = parse_model("[lattice]\nkind = point\n[hamiltonian]\nterm = 1+ 0:z\n");
        assert!(bad.is_err());

        let bad = parse_model("[lattice]\nkind = point\n[parameters]\ng = foo(2)\n")
            .unwrap_err();
        assert!(bad.to_string().contains("unknown function"), "{bad}");
    }

    #[test]
    fn builtin_family_conflicts_are_rejected() {
        let err = parse_model(
            "[lattice]\nkind = chain 8\n[hamiltonian]\neach = -1 j:x\n\
             [family]\nbuiltin = translation-pump\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("conflict"), "{err}");

        let err = parse_model(
            "[lattice]\nkind = chain 4\n[family]\nbuiltin = translation-pump\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("chain 8"), "{err}");
    }

    #[test]
    fn each_lines_expand_with_open_chain_ends() {
        let spec = parse_model(
            "[lattice]\nkind = chain 3\n[hamiltonian]\neach = -1 j:z j+1:z\n",
        )
        .unwrap();
        let density = spec.density_at(&MeshSpec::Point, &[]).unwrap();
        // Two bond terms on a 3-site chain: anchored at sites 0 and 1.
        assert_eq!(density.get(&[0]).terms().count(), 1);
        assert_eq!(density.get(&[1]).terms().count(), 1);
        assert!(density.get(&[2]).is_zero());
    }

    #[test]
    fn sphere_model_density_matches_field_direction() {
        let spec = parse_model(builtin_model("spin-half-sphere").unwrap()).unwrap();
        let n = [0.6, 0.0, 0.8];
        let density = spec
            .density_at(&MeshSpec::Sphere(4, 6), &n)
            .unwrap();
        let op = density.get(&[0]);
        // -i(n·σ)/2 at n = (0.6, 0, 0.8): two purely imaginary entries
        // (the ny = 0 one is dropped), the largest of magnitude 0.4.
        let mut seen = 0;
        for (_, coeff) in op.terms() {
            assert!(coeff.re.abs() < 1e-15);
            seen += 1;
        }
        assert_eq!(seen, 2, "ny = 0 entry must be pruned");
        assert!((op.max_coeff() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn charge_density_is_uniform_half_z() {
        let spec = parse_model(builtin_model("translation-pump").unwrap()).unwrap();
        let (charge, group) = spec.charge().unwrap().unwrap();
        assert_eq!(group, "u1");
        let expect = crate::families::uniform_half_z_charge(&spec.lattice().unwrap()).unwrap();
        let diff = charge.sub_chain(&expect).unwrap();
        assert_eq!(diff.max_coeff(), 0.0);
    }

    #[test]
    fn res_override_keeps_mesh_kind() {
        let spec = parse_model(builtin_model("spin-half-sphere").unwrap()).unwrap();
        let mesh = spec.mesh_spec().with_res("4x6").unwrap();
        assert_eq!(mesh, MeshSpec::Sphere(4, 6));
        assert!(spec.mesh_spec().with_res("64").is_err());
        assert!(MeshSpec::Circle(8).with_res("64").is_ok());
        assert!(MeshSpec::Point.with_res("4").is_err());
    }
}
