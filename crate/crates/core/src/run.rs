//! Task runner: drives the complex, current, spectral, and descent modules
//! from a parsed [`ModelSpec`], emits results in stable formats, and caches
//! per-cell spectral contexts on disk.
//!
//! A run is deterministic: identical (spec, seed, version) produce
//! byte-identical JSON.  The optional wall-clock `runtime` field is
//! therefore omitted unless explicitly requested.  The spectral cache is
//! keyed by (model hash, cell point); cached eigendecompositions are
//! re-validated against a fresh assembly of the Hamiltonian on load, so a
//! stale entry falls back to recomputation instead of poisoning results.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::text::{format_operator_inline, parse_operator};
use crate::algebra::LocalOperator;
use crate::complex::{
    self, boundary, boundary_zero, graded_bracket, random_chain, Chain, Graded,
};
use crate::currents::{
    ambiguity_witness, charge_current, energy_current, invariance_residual, ChargeDensity,
    HamiltonianDensity,
};
use crate::descent::{
    berry_form, connection_from_family, curvature, hall_conductance, mc_descend,
    thouless_charge, EquivariantData, Family, FamilyContexts, SolveReport,
};
use crate::error::{Error, Result};
use crate::geometry::{ConicalPartition, Lattice, SiteId};
use crate::mesh::ParamMesh;
use crate::model::{MeshSpec, ModelSpec};
use crate::spectral::{
    default_probe_basis, lieb_robinson_probe, lr_table_to_csv, GappedContext, LrSample,
    SpectralContext,
};

/// The tasks the runner can execute, one per CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    CheckComplex,
    Currents,
    LrProbe,
    Berry,
    Hall,
    Pump,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::CheckComplex => "check-complex",
            TaskKind::Currents => "currents",
            TaskKind::LrProbe => "lr-probe",
            TaskKind::Berry => "berry",
            TaskKind::Hall => "hall",
            TaskKind::Pump => "pump",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        match name {
            "check-complex" => Some(TaskKind::CheckComplex),
            "currents" => Some(TaskKind::Currents),
            "lr-probe" => Some(TaskKind::LrProbe),
            "berry" => Some(TaskKind::Berry),
            "hall" => Some(TaskKind::Hall),
            "pump" => Some(TaskKind::Pump),
            _ => None,
        }
    }
}

/// Command-line overrides applied on top of the model file.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// Mesh resolution override, `"64"` or `"20x40"`.
    pub res: Option<String>,
    /// Filter width as a fraction of the minimum gap.
    pub gap_fraction: Option<f64>,
    /// RNG seed override.
    pub seed: Option<u64>,
    /// Spectral cache directory; `None` consults `NOETHER_CACHE_DIR`.
    pub cache_dir: Option<PathBuf>,
    /// Include wall-clock runtime in the result (breaks byte-identical
    /// output across runs, so off by default).
    pub timing: bool,
}

/// Complex value in the result schema.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Value {
    pub re: f64,
    pub im: f64,
}

/// The residual ledger accompanying every value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    /// Descent/solve residuals (or the worst identity residual for
    /// verification tasks).
    pub mc: f64,
    /// Cycle-level defect: quantization, closedness, or sign leakage.
    pub cycle: f64,
    /// Stability under a moved partition/cut (or witness defect).
    pub partition: f64,
}

/// Who produced the number: model hash, software version, RNG seed.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub model_hash: String,
    pub version: String,
    pub seed: u64,
}

/// One run's outcome: the invariant value, its residuals, and provenance.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub model: String,
    pub mesh: String,
    pub invariant: String,
    pub value: Value,
    pub residuals: Residuals,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime: Option<f64>,
    /// (x, y) samples of the computed form along mesh cells, for plotdata.
    #[serde(skip)]
    pub plot: Vec<(f64, f64)>,
    /// Raw Lieb-Robinson table, for CSV emission.
    #[serde(skip)]
    pub lr_table: Vec<LrSample>,
    /// Whether every residual met its tolerance (drives the exit code).
    #[serde(skip)]
    pub within_tolerance: bool,
}

struct Tolerances {
    mc: f64,
    cycle: f64,
    partition: f64,
}

impl TaskKind {
    /// Pinned default tolerances; the model's task block can override each.
    fn default_tolerances(&self) -> Tolerances {
        match self {
            TaskKind::CheckComplex => Tolerances {
                mc: 1e-12,
                cycle: f64::INFINITY,
                partition: f64::INFINITY,
            },
            TaskKind::Currents => Tolerances {
                mc: 1e-12,
                cycle: 1e-10,
                partition: 1e-12,
            },
            TaskKind::LrProbe => Tolerances {
                mc: 1e-12,
                cycle: 1e-12,
                partition: f64::INFINITY,
            },
            TaskKind::Berry => Tolerances {
                mc: 2e-2,
                cycle: 1e-3,
                partition: f64::INFINITY,
            },
            TaskKind::Hall => Tolerances {
                mc: 1e-8,
                cycle: 1e-9,
                partition: 1e-6,
            },
            TaskKind::Pump => Tolerances {
                mc: 1e-7,
                cycle: 1e-9,
                partition: 1e-6,
            },
        }
    }
}

fn report_worst(report: &SolveReport) -> f64 {
    report
        .cycle_residual
        .max(report.equation_residual)
        .max(report.excitation_residual)
}

/// Execute `task` against `spec` with `cfg` overrides.
pub fn run(spec: &ModelSpec, task: TaskKind, cfg: &RunConfig) -> Result<RunResult> {
    if let Some(declared) = spec.task().invariant() {
        if declared != task.name() {
            return Err(Error::Model(format!(
                "the model declares task `{declared}`, not `{}`",
                task.name()
            )));
        }
    }
    let start = Instant::now();
    let seed = cfg.seed.unwrap_or_else(|| spec.task().seed());

    let defaults = task.default_tolerances();
    let tol = Tolerances {
        mc: spec.task().tol_mc(defaults.mc),
        cycle: spec.task().tol_cycle(defaults.cycle),
        partition: spec.task().tol_partition(defaults.partition),
    };

    let (mesh_tag, value, residuals, plot, lr_table) = match task {
        TaskKind::CheckComplex => run_check_complex(spec, seed)?,
        TaskKind::Currents => run_currents(spec, seed)?,
        TaskKind::LrProbe => run_lr_probe(spec)?,
        TaskKind::Berry => run_berry(spec, cfg, &tol)?,
        TaskKind::Hall => run_hall(spec, cfg, &tol)?,
        TaskKind::Pump => run_pump(spec, cfg, &tol)?,
    };

    let within_tolerance = residuals.mc <= tol.mc
        && residuals.cycle <= tol.cycle
        && residuals.partition <= tol.partition;
    Ok(RunResult {
        model: spec.name().to_string(),
        mesh: mesh_tag,
        invariant: task.name().to_string(),
        value,
        residuals,
        provenance: Provenance {
            model_hash: spec.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        },
        runtime: cfg.timing.then(|| start.elapsed().as_secs_f64()),
        plot,
        lr_table,
        within_tolerance,
    })
}

type TaskOutput = (String, Value, Residuals, Vec<(f64, f64)>, Vec<LrSample>);

fn run_check_complex(spec: &ModelSpec, seed: u64) -> Result<TaskOutput> {
    let lattice = spec.lattice()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = complex::self_check(&lattice, spec.task().cases(), &mut rng)?;
    let worst = report.worst();
    Ok((
        "point".into(),
        Value { re: worst, im: 0.0 },
        Residuals {
            mc: worst,
            cycle: 0.0,
            partition: 0.0,
        },
        Vec::new(),
        Vec::new(),
    ))
}

/// `‖∂j + {H, d}‖` for a current `j` sourced by density `d` under the
/// Hamiltonian derivation of `h`.
fn conservation_residual(
    j: &Chain,
    h: &HamiltonianDensity,
    d: &Chain,
    lattice: &Lattice,
) -> Result<f64> {
    let bracket = graded_bracket(
        &Graded::Derivation(h.derivation().clone()),
        &Graded::Chain(d.clone()),
        lattice,
    )?;
    let Graded::Chain(source) = bracket else {
        return Err(Error::Chain("expected a chain-valued bracket".into()));
    };
    Ok(boundary(j)?.add_chain(&source)?.max_coeff())
}

fn run_currents(spec: &ModelSpec, seed: u64) -> Result<TaskOutput> {
    let lattice = spec.lattice()?;
    let density = spec.density_at(&MeshSpec::Point, &[])?;
    let h = HamiltonianDensity::new(density, &lattice)?;

    let je = energy_current(&h, &lattice)?;
    let mut mc = conservation_residual(&je, &h, h.density(), &lattice)?;

    // Conserved-charge current, when the model declares a symmetry.
    let mut cycle = 0.0;
    if let Some((charge, group)) = spec.charge()? {
        let q = ChargeDensity::new(charge, Some(group))?;
        cycle = invariance_residual(&h, &q, &lattice)?;
        let jq = charge_current(&h, &q, &lattice)?;
        mc = mc.max(conservation_residual(&jq, &h, q.density(), &lattice)?);
    }

    // Current ambiguity: shift by an exact 1-chain and recover the witness
    // through the contracting homotopy.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_chain(2, 1.5, &lattice, &mut rng)?;
    let j2 = je.add_chain(&boundary(&m)?)?;
    let witness = ambiguity_witness(&je, &j2, &lattice)?;
    let partition = boundary(&witness)?
        .sub_chain(&je.sub_chain(&j2)?)?
        .max_coeff();

    let worst = mc.max(cycle).max(partition);
    Ok((
        "point".into(),
        Value { re: worst, im: 0.0 },
        Residuals {
            mc,
            cycle,
            partition,
        },
        Vec::new(),
        Vec::new(),
    ))
}

fn min_support_distance(
    lattice: &Lattice,
    a: &BTreeSet<SiteId>,
    b: &BTreeSet<SiteId>,
) -> f64 {
    let mut d = f64::INFINITY;
    for &i in a {
        for &j in b {
            d = d.min(lattice.distance(i, j));
        }
    }
    d
}

fn run_lr_probe(spec: &ModelSpec) -> Result<TaskOutput> {
    let lattice = spec.lattice()?;
    let density = spec.density_at(&MeshSpec::Point, &[])?;
    let h = boundary_zero(&density, &lattice)?
        .total()
        .scale(Complex64::new(0.0, -1.0));
    let ctx = SpectralContext::diagonalize(&h, &lattice)?;

    let probe_text = spec.task().probe().unwrap_or("1 0:z");
    let a = parse_operator(probe_text, &lattice)?;
    if a.is_zero() {
        return Err(Error::Model("the probe operator is zero".into()));
    }
    let a_support = a.support();

    // Default to single-site probes across the lattice; `max-sep` adds
    // two-site probes up to that separation.
    let max_sep = spec.task().max_sep().unwrap_or(0.0);
    let basis = default_probe_basis(&lattice, max_sep);
    let probes: Vec<(f64, LocalOperator)> = basis
        .into_iter()
        .map(|b| {
            let r = min_support_distance(&lattice, &a_support, &b.support());
            (r, b)
        })
        .collect();
    let times = spec.task().times();
    let table = lieb_robinson_probe(&ctx, &a, &probes, &times)?;

    // Commutators with operators disjoint from the probe must vanish
    // exactly before any evolution.
    let t0_leak = table
        .iter()
        .filter(|s| s.t == 0.0 && s.r > 0.0)
        .fold(0.0f64, |acc, s| acc.max(s.norm));

    // Fitted slope of log peak norm against distance; a light cone means
    // it is non-positive.
    let mut rs: Vec<f64> = table.iter().map(|s| s.r).collect();
    rs.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    rs.dedup();
    let points: Vec<(f64, f64)> = rs
        .iter()
        .map(|&r| {
            let peak = table
                .iter()
                .filter(|s| s.r == r)
                .fold(0.0f64, |acc, s| acc.max(s.norm));
            (r, peak.max(1e-30).ln())
        })
        .collect();
    let slope = fitted_slope(&points);

    let plot = points.clone();
    Ok((
        "point".into(),
        Value {
            re: slope,
            im: 0.0,
        },
        Residuals {
            mc: t0_leak,
            cycle: slope.max(0.0),
            partition: 0.0,
        },
        plot,
        table,
    ))
}

fn fitted_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    sxy / sxx
}

fn resolve_mesh(spec: &ModelSpec, cfg: &RunConfig) -> Result<(MeshSpec, ParamMesh)> {
    let mut ms = spec.mesh_spec();
    if let Some(res) = &cfg.res {
        ms = ms.with_res(res)?;
    }
    Ok((ms, ms.build()?))
}

fn build_contexts(
    spec: &ModelSpec,
    cfg: &RunConfig,
    mesh: ParamMesh,
    family: &dyn Family,
) -> Result<FamilyContexts> {
    let gap_fraction = cfg.gap_fraction.unwrap_or_else(|| spec.gap_fraction());
    match cache_dir(cfg) {
        Some(dir) => {
            let cached = CachedFamily::new(family, dir, spec.hash())?;
            FamilyContexts::build(&cached, mesh, gap_fraction)
        }
        None => FamilyContexts::build(family, mesh, gap_fraction),
    }
}

fn equivariant_charge(spec: &ModelSpec) -> Result<EquivariantData> {
    let Some((charge, _group)) = spec.charge()? else {
        return Err(Error::Model(
            "this task needs a [symmetry] block with a u1 charge".into(),
        ));
    };
    EquivariantData::u1(charge, spec.task().quadrature())
}

fn run_berry(spec: &ModelSpec, cfg: &RunConfig, tol: &Tolerances) -> Result<TaskOutput> {
    let (ms, mesh) = resolve_mesh(spec, cfg)?;
    if !matches!(ms, MeshSpec::Sphere(_, _) | MeshSpec::Torus(_, _)) {
        return Err(Error::Model(format!(
            "the berry task integrates over a closed 2d mesh, not {}",
            ms.describe()
        )));
    }
    let family = spec.resolve_family(ms)?;
    let fc = build_contexts(spec, cfg, mesh, family.as_family())?;
    let g = connection_from_family(&fc)?;

    // The holonomy form carries the quantized total; the Maurer-Cartan
    // solve cross-checks it and supplies the descent residual (its own
    // total picks up the O(h²) curvature excitation, so it is a residual
    // source, not the reported value).
    let form = berry_form(&fc, &g)?;
    let total = form.integrate();
    let f = curvature(&fc, &g)?;
    let sol = mc_descend(&fc, &f, tol.mc)?;

    let two_pi = 2.0 * std::f64::consts::PI;
    let winding = (total.im / two_pi).round();
    let cycle = (total - Complex64::new(0.0, two_pi * winding)).norm();
    let plot: Vec<(f64, f64)> = form
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64, v.im))
        .collect();
    Ok((
        ms.describe(),
        Value {
            re: total.re,
            im: total.im,
        },
        Residuals {
            mc: report_worst(&sol.report),
            cycle,
            partition: 0.0,
        },
        plot,
        Vec::new(),
    ))
}

fn run_hall(spec: &ModelSpec, cfg: &RunConfig, tol: &Tolerances) -> Result<TaskOutput> {
    let (ms, mesh) = resolve_mesh(spec, cfg)?;
    if ms != MeshSpec::Point {
        return Err(Error::Model(format!(
            "the hall task runs at a point mesh, not {}",
            ms.describe()
        )));
    }
    let family = spec.resolve_family(ms)?;
    let fc = build_contexts(spec, cfg, mesh, family.as_family())?;
    let eq = equivariant_charge(spec)?;
    let apex = spec.task().hall_apex();
    let partition = ConicalPartition::sectors(apex, spec.task().angles())?;
    let hr = hall_conductance(&fc, &eq, &partition, tol.mc)?;
    Ok((
        ms.describe(),
        Value {
            re: hr.sigma,
            im: 0.0,
        },
        Residuals {
            mc: report_worst(&hr.report),
            cycle: hr.imag_defect,
            partition: hr.partition_residual,
        },
        Vec::new(),
        Vec::new(),
    ))
}

fn run_pump(spec: &ModelSpec, cfg: &RunConfig, tol: &Tolerances) -> Result<TaskOutput> {
    let (ms, mesh) = resolve_mesh(spec, cfg)?;
    if !matches!(ms, MeshSpec::Circle(_)) {
        return Err(Error::Model(format!(
            "the pump task runs over a circle mesh, not {}",
            ms.describe()
        )));
    }
    let family = spec.resolve_family(ms)?;
    let fc = build_contexts(spec, cfg, mesh, family.as_family())?;
    let eq = equivariant_charge(spec)?;
    let g = connection_from_family(&fc)?;
    let pr = thouless_charge(
        &fc,
        &g,
        &eq,
        spec.task().apex(),
        spec.task().window(),
        tol.mc,
    )?;
    let plot: Vec<(f64, f64)> = fc
        .mesh()
        .edges()
        .iter()
        .zip(&pr.edge_values)
        .map(|(e, &v)| (e.midpoint[0], v))
        .collect();
    Ok((
        ms.describe(),
        Value {
            re: pr.charge,
            im: 0.0,
        },
        Residuals {
            mc: report_worst(&pr.report),
            cycle: pr.real_defect,
            partition: pr.partition_residual,
        },
        plot,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Output formats for [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
    Plotdata,
}

impl EmitFormat {
    pub fn from_name(name: &str) -> Option<EmitFormat> {
        match name {
            "json" => Some(EmitFormat::Json),
            "csv" => Some(EmitFormat::Csv),
            "plotdata" => Some(EmitFormat::Plotdata),
            _ => None,
        }
    }
}

/// Serialize a result.  JSON follows the documented schema with stable
/// field order; CSV is `t,r,norm` for Lieb-Robinson tables and flat
/// `key,value` rows otherwise; plotdata is `(x, y)` columns of the
/// computed form along mesh cells.
pub fn emit(result: &RunResult, format: EmitFormat) -> Vec<u8> {
    match format {
        EmitFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(result).expect("result fields serialize");
            text.push('\n');
            text.into_bytes()
        }
        EmitFormat::Csv => {
            if !result.lr_table.is_empty() {
                return lr_table_to_csv(&result.lr_table).into_bytes();
            }
            let mut out = String::from("key,value\n");
            let rows: Vec<(&str, String)> = vec![
                ("model", result.model.clone()),
                ("mesh", result.mesh.clone()),
                ("invariant", result.invariant.clone()),
                ("value_re", result.value.re.to_string()),
                ("value_im", result.value.im.to_string()),
                ("residual_mc", result.residuals.mc.to_string()),
                ("residual_cycle", result.residuals.cycle.to_string()),
                (
                    "residual_partition",
                    result.residuals.partition.to_string(),
                ),
                ("model_hash", result.provenance.model_hash.clone()),
                ("version", result.provenance.version.clone()),
                ("seed", result.provenance.seed.to_string()),
            ];
            for (k, v) in rows {
                let _ = writeln!(out, "{k},{v}");
            }
            if let Some(rt) = result.runtime {
                let _ = writeln!(out, "runtime,{rt}");
            }
            out.into_bytes()
        }
        EmitFormat::Plotdata => {
            let mut out = String::new();
            for (x, y) in &result.plot {
                let _ = writeln!(out, "{x} {y}");
            }
            out.into_bytes()
        }
    }
}

// ---------------------------------------------------------------------------
// Spectral cache
// ---------------------------------------------------------------------------

fn cache_dir(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.cache_dir
        .clone()
        .or_else(|| std::env::var_os("NOETHER_CACHE_DIR").map(PathBuf::from))
}

/// On-disk image of a dense spectral context: the Hamiltonian in operator
/// text (bit-exact round trip) and its eigendecomposition, column-major.
#[derive(Serialize, Deserialize)]
struct StoredContext {
    h_op: String,
    eigenvalues: Vec<f64>,
    vectors_re: Vec<f64>,
    vectors_im: Vec<f64>,
}

/// A family wrapper that persists dense contexts keyed by
/// (model hash, cell point).  Factorized backends pass through uncached.
struct CachedFamily<'a> {
    inner: &'a dyn Family,
    dir: PathBuf,
    model_hash: String,
}

impl<'a> CachedFamily<'a> {
    fn new(inner: &'a dyn Family, dir: PathBuf, model_hash: String) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(CachedFamily {
            inner,
            dir,
            model_hash,
        })
    }

    fn cell_path(&self, point: &[f64]) -> PathBuf {
        let mut hasher = Sha256::new();
        hasher.update(self.model_hash.as_bytes());
        hasher.update(b"|");
        hasher.update(format!("{point:?}").as_bytes());
        let digest = hasher.finalize();
        let mut key = String::with_capacity(32);
        for byte in &digest[..16] {
            let _ = write!(key, "{byte:02x}");
        }
        self.dir.join(format!("{key}.json"))
    }

    /// The Hamiltonian this cell must realize, from the family's density.
    fn expected_hamiltonian(&self, point: &[f64]) -> Result<LocalOperator> {
        let density = self.inner.density(point)?;
        Ok(boundary_zero(&density, self.inner.lattice())?
            .total()
            .scale(Complex64::new(0.0, -1.0)))
    }

    fn load(&self, path: &Path, expected: &LocalOperator) -> Option<SpectralContext> {
        let text = std::fs::read_to_string(path).ok()?;
        let stored: StoredContext = serde_json::from_str(&text).ok()?;
        let lattice = self.inner.lattice();
        let h = parse_operator(&stored.h_op, lattice).ok()?;
        if h.sub(expected).max_coeff() > 1e-12 {
            return None;
        }
        let n = stored.eigenvalues.len();
        if stored.vectors_re.len() != n * n || stored.vectors_im.len() != n * n {
            return None;
        }
        let vectors = DMatrix::from_iterator(
            n,
            n,
            stored
                .vectors_re
                .iter()
                .zip(&stored.vectors_im)
                .map(|(&re, &im)| Complex64::new(re, im)),
        );
        SpectralContext::from_parts(expected, lattice, stored.eigenvalues, vectors).ok()
    }

    fn store(&self, path: &Path, ctx: &SpectralContext) -> Result<()> {
        let vectors = ctx.eigenvectors();
        let stored = StoredContext {
            h_op: format_operator_inline(ctx.hamiltonian(), ctx.lattice()),
            eigenvalues: ctx.eigenvalues().to_vec(),
            vectors_re: vectors.iter().map(|c| c.re).collect(),
            vectors_im: vectors.iter().map(|c| c.im).collect(),
        };
        let text = serde_json::to_string(&stored).expect("plain data serializes");
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

impl Family for CachedFamily<'_> {
    fn lattice(&self) -> &Lattice {
        self.inner.lattice()
    }

    fn density(&self, point: &[f64]) -> Result<Chain> {
        self.inner.density(point)
    }

    fn context(&self, point: &[f64]) -> Result<GappedContext> {
        let expected = self.expected_hamiltonian(point)?;
        let path = self.cell_path(point);
        if let Some(ctx) = self.load(&path, &expected) {
            return Ok(ctx.into());
        }
        let ctx = self.inner.context(point)?;
        if let GappedContext::Dense(sc) = &ctx {
            self.store(&path, sc)?;
        }
        Ok(ctx)
    }

    fn edge_transport(
        &self,
        tail: &[f64],
        head: &[f64],
    ) -> Result<Option<crate::spectral::Circuit>> {
        self.inner.edge_transport(tail, head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    #[test]
    fn fitted_slope_of_a_line_is_exact() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        assert!((fitted_slope(&pts) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn check_complex_meets_identity_tolerances() {
        let spec = parse_model("[lattice]\nkind = grid 2 2\n").unwrap();
        let result = run(&spec, TaskKind::CheckComplex, &RunConfig::default()).unwrap();
        assert!(result.within_tolerance, "residuals {:?}", result.residuals);
        assert!(result.residuals.mc <= 1e-12);
        assert_eq!(result.invariant, "check-complex");
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let spec =
            parse_model("[lattice]\nkind = point\n[task]\ninvariant = berry\n").unwrap();
        let err = run(&spec, TaskKind::CheckComplex, &RunConfig::default()).unwrap_err();
        assert!(err.to_string().contains("declares task"), "{err}");
    }
}
