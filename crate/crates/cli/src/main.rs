//! `noether`: run complex checks, current laws, Lieb-Robinson probes, and
//! topological invariants against model files from the command line.
//!
//! Each subcommand maps to one task; `--model` accepts a file path or a
//! built-in model name.  Results land on stdout (or `--out`) as JSON, CSV,
//! or plotdata.  The exit code is 0 when every residual met its tolerance,
//! 1 when a residual exceeded one, and 2 on hard errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use noether_core::model::{builtin_model, parse_model, ModelSpec, BUILTIN_MODEL_NAMES};
use noether_core::run::{emit, run, EmitFormat, RunConfig, TaskKind};

#[derive(Parser)]
#[command(
    name = "noether",
    version,
    about = "Conservation laws and topological invariants for lattice spin models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the boundary, homotopy, and bracket identities on random chains.
    CheckComplex(TaskArgs),
    /// Build conserved currents and verify the conservation laws.
    Currents(TaskArgs),
    /// Gauge locality: commutator norms of an evolved probe versus distance.
    LrProbe(TaskArgs),
    /// Integrate the Berry curvature of a parameter family over its mesh.
    Berry(TaskArgs),
    /// Hall conductance from the equivariant pairing at a conical partition.
    Hall(TaskArgs),
    /// Transported charge around a pump cycle.
    Pump(PumpArgs),
}

#[derive(Args)]
struct TaskArgs {
    /// Model file path, or a built-in name (e.g. spin-half-sphere).
    #[arg(long)]
    model: String,

    /// Mesh resolution override: "64" for 1d meshes, "20x40" for 2d.
    #[arg(long)]
    res: Option<String>,

    /// Spectral filter width as a fraction of the minimum gap, in (0, 1/2].
    #[arg(long)]
    gap_fraction: Option<f64>,

    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Cache eigendecompositions in this directory (or set NOETHER_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    /// Include wall-clock runtime in the result (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PumpArgs {
    #[command(flatten)]
    base: TaskArgs,

    /// Number of steps around the pump cycle (shorthand for --res N).
    #[arg(long, conflicts_with = "res")]
    period_steps: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy)]
enum Format {
    Json,
    Csv,
    Plotdata,
}

impl From<Format> for EmitFormat {
    fn from(f: Format) -> EmitFormat {
        match f {
            Format::Json => EmitFormat::Json,
            Format::Csv => EmitFormat::Csv,
            Format::Plotdata => EmitFormat::Plotdata,
        }
    }
}

fn load_model(name: &str) -> Result<ModelSpec> {
    let text = if Path::new(name).exists() {
        std::fs::read_to_string(name).with_context(|| format!("reading model file {name}"))?
    } else if let Some(builtin) = builtin_model(name) {
        builtin.to_string()
    } else {
        bail!(
            "no model file or built-in named `{name}` (built-ins: {})",
            BUILTIN_MODEL_NAMES.join(", ")
        );
    };
    parse_model(&text).with_context(|| format!("parsing model `{name}`"))
}

fn execute(task: TaskKind, args: &TaskArgs, period_steps: Option<usize>) -> Result<bool> {
    let spec = load_model(&args.model)?;
    let cfg = RunConfig {
        res: period_steps
            .map(|n| n.to_string())
            .or_else(|| args.res.clone()),
        gap_fraction: args.gap_fraction,
        seed: args.seed,
        cache_dir: args.cache_dir.clone(),
        timing: args.timing,
    };
    let result = run(&spec, task, &cfg).with_context(|| format!("running {}", task.name()))?;
    let bytes = emit(&result, args.format.into());
    match &args.out {
        Some(path) => std::fs::write(path, bytes)
            .with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .context("writing to stdout")?,
    }
    if !result.within_tolerance {
        eprintln!(
            "noether: residuals exceed tolerances (mc {}, cycle {}, partition {})",
            result.residuals.mc, result.residuals.cycle, result.residuals.partition
        );
    }
    Ok(result.within_tolerance)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args, period_steps) = match &cli.command {
        Command::CheckComplex(a) => (TaskKind::CheckComplex, a, None),
        Command::Currents(a) => (TaskKind::Currents, a, None),
        Command::LrProbe(a) => (TaskKind::LrProbe, a, None),
        Command::Berry(a) => (TaskKind::Berry, a, None),
        Command::Hall(a) => (TaskKind::Hall, a, None),
        Command::Pump(p) => (TaskKind::Pump, &p.base, p.period_steps),
    };
    match execute(task, args, period_steps) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("noether: {err:#}");
            ExitCode::from(2)
        }
    }
}
