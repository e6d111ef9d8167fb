//! Command implementations behind the binary.
//!
//! The binary owns argument parsing; everything after that lives here so
//! it can be tested without spawning a process. Artifacts are
//! deterministic for a given config and seed: JSON results embed the
//! effective configuration (defaults made explicit), CSV artifacts carry
//! it as a leading `#` comment line, and wall times go to the log rather
//! than into files. The one exception is `bench`, whose entire point is
//! measured times.

use crate::audit::verify_commitment;
use crate::costfit::{fit_curves, load_bid_curves, FitOptions};
use crate::error::{Error, Result};
use crate::fleet::{
    load_fleet, replicate_fleet, save_fleet, Fleet, FleetFormat, ReservePolicy,
    DEFAULT_SIGMA_FRACTION,
};
use crate::oracle::exhaustive_uc;
use crate::relaxed::{Relaxation, RelaxedOptions};
use crate::rounding::{rruc, RrucOptions};
use crate::stats::{bench_scaling, load_sweep, BenchOptions, Method};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

/// Fixed default seed so default runs reproduce exactly.
pub const DEFAULT_SEED: u64 = 42;

/// Where a fleet comes from and how to read it.
#[derive(Debug, Clone)]
pub struct FleetInput {
    pub path: PathBuf,
    /// `None` infers from the file extension.
    pub format: Option<FleetFormat>,
    /// Demand override, MW.
    pub demand: Option<f64>,
    /// Demand standard deviation override, MW.
    pub sigma: Option<f64>,
}

impl FleetInput {
    pub fn new(path: PathBuf) -> Self {
        FleetInput {
            path,
            format: None,
            demand: None,
            sigma: None,
        }
    }

    fn format(&self) -> FleetFormat {
        self.format.unwrap_or_else(|| FleetFormat::from_path(&self.path))
    }

    /// Load and apply the demand overrides. A bare `--demand` rescales the
    /// uncertainty at the default fraction; a bare `--sigma` keeps the
    /// file's demand.
    pub fn load(&self) -> Result<Fleet> {
        let fleet = load_fleet(&self.path, self.format())?;
        match (self.demand, self.sigma) {
            (None, None) => Ok(fleet),
            (Some(d), s) => fleet.with_demand(d, s.unwrap_or(DEFAULT_SIGMA_FRACTION * d)),
            (None, Some(s)) => fleet.with_demand(fleet.demand, s),
        }
    }

    fn echo(&self, fleet: &Fleet) -> Value {
        json!({
            "path": self.path,
            "format": self.format(),
            "demand_mw": fleet.demand,
            "sigma_d_mw": fleet.sigma_d,
        })
    }
}

/// Solver knobs shared by the solving commands, defaults made explicit.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    /// Scaled KKT residual target of the relaxation.
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: Relaxation,
    pub reserve_policy: ReservePolicy,
    /// Cut-point stride of the sweep.
    pub stride: usize,
    /// Worker cap; `None` uses every core.
    pub threads: Option<usize>,
    /// Keep per-cut-point objectives in the artifact.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let relaxed = RelaxedOptions::default();
        SolverConfig {
            tol: relaxed.tol,
            max_iter: relaxed.max_iter,
            relaxation: relaxed.relaxation,
            reserve_policy: relaxed.reserve_policy,
            stride: 1,
            threads: None,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> RrucOptions {
        RrucOptions {
            relaxed: RelaxedOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                relaxation: self.relaxation,
                reserve_policy: self.reserve_policy,
            },
            stride: self.stride,
            threads: self.threads,
            trace: self.trace,
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Serialize records to CSV with the config (and any extra notes) as
/// leading comment lines.
fn write_csv<T: Serialize>(path: &Path, config: &Value, notes: &[String], rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: None,
            detail: e.to_string(),
        })?;
    }
    let body = String::from_utf8(writer.into_inner().expect("no flush error on Vec"))
        .expect("csv is utf-8");
    let mut text = format!("# config: {config}\n");
    for note in notes {
        text.push_str(&format!("# {note}\n"));
    }
    text.push_str(&body);
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write a fleet with the effective config attached: a comment line for
/// CSV, an extra top-level key (ignored by the loader) for JSON.
fn write_fleet(fleet: &Fleet, path: &Path, config: &Value) -> Result<()> {
    let format = FleetFormat::from_path(path);
    match format {
        FleetFormat::Csv => {
            save_fleet(fleet, path, format)?;
            let body = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            fs::write(path, format!("# config: {config}\n{body}")).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        FleetFormat::Json => {
            let mut value = serde_json::to_value(fleet).expect("fleet serializes");
            value
                .as_object_mut()
                .expect("fleet is an object")
                .insert("config".into(), config.clone());
            write_json(path, &value)
        }
    }
}

/// `fit`: read a bid-curve file, fit quadratic costs, write a fleet.
pub fn cmd_fit(curves: &Path, out: &Path, options: &FitOptions) -> Result<()> {
    let parsed = load_bid_curves(curves)?;
    let generators = fit_curves(&parsed, options)?;
    let fleet = Fleet::with_default_demand(generators)?;
    let config = json!({
        "command": "fit",
        "curves": curves,
        "out": out,
        "allow_nonmonotone": options.allow_nonmonotone,
        "amortize_startup": options.amortize_startup,
    });
    log::info!("fitted {} curves from {}", fleet.len(), curves.display());
    write_fleet(&fleet, out, &config)
}

/// `solve`: run the relax-and-round pipeline and write the audited
/// solution as JSON.
pub fn cmd_solve(input: &FleetInput, solver: &SolverConfig, out: &Path) -> Result<()> {
    let fleet = input.load()?;
    let solution = rruc(&fleet, &solver.to_options())?;
    verify_commitment(&fleet, &solution, solver.reserve_policy)?;
    log::info!(
        "committed {}/{} units, {:.2} USD/h, {:.3}s",
        solution.k_star,
        fleet.len(),
        solution.objective,
        solution.wall_time
    );
    let config = json!({
        "command": "solve",
        "fleet": input.echo(&fleet),
        "solver": solver,
        "out": out,
    });
    write_json(
        out,
        &json!({
            "config": config,
            "solution": solution,
            "metadata": { "n_units": fleet.len(), "tool_version": env!("CARGO_PKG_VERSION") },
        }),
    )
}

/// `compare`: solve with both the heuristic and the exhaustive reference,
/// report objectives and their relative deviation.
pub fn cmd_compare(
    input: &FleetInput,
    solver: &SolverConfig,
    n_cap: usize,
    out: &Path,
) -> Result<()> {
    let fleet = input.load()?;
    let heuristic = rruc(&fleet, &solver.to_options())?;
    verify_commitment(&fleet, &heuristic, solver.reserve_policy)?;
    let reference = exhaustive_uc(&fleet, n_cap, solver.reserve_policy)?;
    let deviation = (heuristic.objective - reference.objective) / reference.objective;
    log::info!(
        "rruc {:.2} vs oracle {:.2} USD/h, deviation {:.4}%",
        heuristic.objective,
        reference.objective,
        deviation * 100.0
    );
    let config = json!({
        "command": "compare",
        "fleet": input.echo(&fleet),
        "solver": solver,
        "n_cap": n_cap,
        "out": out,
    });
    write_json(
        out,
        &json!({
            "config": config,
            "rruc": heuristic,
            "oracle": reference,
            "deviation": deviation,
            "metadata": { "n_units": fleet.len(), "tool_version": env!("CARGO_PKG_VERSION") },
        }),
    )
}

/// `bench`: time the solvers across replicated fleet sizes, write CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_bench(
    input: &FleetInput,
    multipliers: &[u32],
    methods: &[Method],
    trials: usize,
    seed: u64,
    deviation: f64,
    solver: &SolverConfig,
    out: &Path,
) -> Result<()> {
    let fleet = input.load()?;
    let options = BenchOptions {
        seed,
        trials,
        deviation,
        rruc: solver.to_options(),
    };
    let records = bench_scaling(&fleet, multipliers, methods, &options)?;
    let config = json!({
        "command": "bench",
        "fleet": input.echo(&fleet),
        "solver": solver,
        "multipliers": multipliers,
        "methods": methods,
        "trials": trials,
        "seed": seed,
        "deviation": deviation,
        "out": out,
    });
    write_csv(out, &config, &[], &records)
}

/// `replicate`: scale a fleet up with seeded jitter and write it back out.
pub fn cmd_replicate(
    input: &FleetInput,
    multiplier: u32,
    deviation: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let fleet = input.load()?;
    let replicated = replicate_fleet(&fleet, multiplier, deviation, seed)?;
    log::info!("replicated {} units into {}", fleet.len(), replicated.len());
    let config = json!({
        "command": "replicate",
        "fleet": input.echo(&fleet),
        "multiplier": multiplier,
        "deviation": deviation,
        "seed": seed,
        "out": out,
    });
    write_fleet(&replicated, out, &config)
}

/// `sweep-stats`: commitment composition across a grid of load levels,
/// written as CSV for plotting.
pub fn cmd_sweep_stats(
    input: &FleetInput,
    load_start: f64,
    load_step: f64,
    load_end: f64,
    solver: &SolverConfig,
    out: &Path,
) -> Result<()> {
    let fleet = input.load()?;
    let sweep = load_sweep(&fleet, load_start, load_step, load_end, &solver.to_options())?;
    let config = json!({
        "command": "sweep-stats",
        "fleet": input.echo(&fleet),
        "solver": solver,
        "load_start_mw": load_start,
        "load_step_mw": load_step,
        "load_end_mw": load_end,
        "out": out,
    });
    let notes: Vec<String> = sweep
        .truncated_at
        .map(|at| format!("truncated_at_mw: {at}"))
        .into_iter()
        .collect();
    write_csv(out, &config, &notes, &sweep.records)
}
