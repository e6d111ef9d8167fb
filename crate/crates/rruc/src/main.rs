use clap::{Args, Parser, Subcommand, ValueEnum};
use rruc::cli::{
    cmd_bench, cmd_compare, cmd_fit, cmd_replicate, cmd_solve, cmd_sweep_stats, FleetInput,
    SolverConfig, DEFAULT_SEED,
};
use rruc::costfit::FitOptions;
use rruc::fleet::{FleetFormat, ReservePolicy, DEFAULT_DEVIATION};
use rruc::oracle::DEFAULT_N_CAP;
use rruc::relaxed::Relaxation;
use rruc::stats::Method;
use std::path::PathBuf;

/// Relax-and-round unit commitment toolkit.
#[derive(Parser)]
#[command(name = "rruc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for FleetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FleetFormat::Csv,
            FormatArg::Json => FleetFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RelaxationArg {
    Perspective,
    Bilinear,
}

impl From<RelaxationArg> for Relaxation {
    fn from(r: RelaxationArg) -> Self {
        match r {
            RelaxationArg::Perspective => Relaxation::Perspective,
            RelaxationArg::Bilinear => Relaxation::Bilinear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Contingency term ranges over the whole fleet.
    FleetMax,
    /// Contingency term ranges over the committed units only.
    CommittedMax,
}

impl From<PolicyArg> for ReservePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::FleetMax => ReservePolicy::FleetMax,
            PolicyArg::CommittedMax => ReservePolicy::CommittedMax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum MethodArg {
    Rruc,
    Oracle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rruc => Method::Rruc,
            MethodArg::Oracle => Method::Oracle,
        }
    }
}

#[derive(Args)]
struct FleetArgs {
    /// Fleet file (CSV of generators, or JSON with demand_mw/sigma_d_mw).
    #[arg(long)]
    fleet: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Demand override, MW.
    #[arg(long)]
    demand: Option<f64>,
    /// Demand standard deviation override, MW.
    #[arg(long)]
    sigma: Option<f64>,
}

impl FleetArgs {
    fn input(&self) -> FleetInput {
        FleetInput {
            path: self.fleet.clone(),
            format: self.format.map(Into::into),
            demand: self.demand,
            sigma: self.sigma,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Relaxation KKT tolerance (scaled residual).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Iteration budget of the relaxed solve.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Continuous formulation of the commitment variables.
    #[arg(long, value_enum, default_value = "perspective")]
    relaxation: RelaxationArg,
    /// Scope of the largest-unit contingency in the reserve requirement.
    #[arg(long, value_enum, default_value = "fleet-max")]
    reserve_policy: PolicyArg,
    /// Evaluate every stride-th cut point (the last is always kept).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Worker cap for parallel regions; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep per-cut-point objectives in the artifact.
    #[arg(long)]
    trace: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            relaxation: self.relaxation.into(),
            reserve_policy: self.reserve_policy.into(),
            stride: self.stride,
            threads: self.threads,
            trace: self.trace,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit quadratic cost models (USD/h) to stepwise bid curves.
    Fit {
        /// Bid-curve JSON file (array of curves, MW and USD/MWh).
        #[arg(long)]
        curves: PathBuf,
        /// Output fleet file; .json keeps demand fields, .csv is
        /// generators only.
        #[arg(long)]
        out: PathBuf,
        /// Accept curves whose step prices decrease.
        #[arg(long)]
        allow_nonmonotone: bool,
        /// Fold startup cost into the hourly no-load cost.
        #[arg(long)]
        amortize_startup: bool,
    },
    /// Commit and dispatch a fleet by relax-and-round.
    Solve {
        #[command(flatten)]
        fleet: FleetArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Output JSON path for the solution artifact.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve with both rruc and the exhaustive oracle and report the gap.
    Compare {
        #[command(flatten)]
        fleet: FleetArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Refuse exhaustive search above this many units.
        #[arg(long, default_value_t = DEFAULT_N_CAP)]
        n_cap: usize,
        /// Output JSON path for the comparison artifact.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the solvers across replicated fleet sizes; writes CSV.
    Bench {
        #[command(flatten)]
        fleet: FleetArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Replication multipliers, e.g. 1,2,6.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        multipliers: Vec<u32>,
        /// Methods to time.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "rruc")]
        methods: Vec<MethodArg>,
        /// Timed repetitions per point (after one warmup); median reported.
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Seed for the replication jitter.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Relative parameter jitter applied when replicating.
        #[arg(long, default_value_t = DEFAULT_DEVIATION)]
        deviation: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate a fleet with seeded jitter into a larger one.
    Replicate {
        #[command(flatten)]
        fleet: FleetArgs,
        /// How many copies of the base fleet to emit.
        #[arg(long)]
        multiplier: u32,
        /// Relative parameter jitter in [0, 1).
        #[arg(long, default_value_t = DEFAULT_DEVIATION)]
        deviation: f64,
        /// Jitter seed.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output fleet file (.csv or .json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Commitment composition across a grid of load levels; writes CSV.
    SweepStats {
        #[command(flatten)]
        fleet: FleetArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// First load level, MW.
        #[arg(long)]
        load_start: f64,
        /// Load increment, MW.
        #[arg(long)]
        load_step: f64,
        /// Last load level, MW (inclusive).
        #[arg(long)]
        load_end: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> rruc::Result<()> {
    match cli.command {
        Command::Fit {
            curves,
            out,
            allow_nonmonotone,
            amortize_startup,
        } => cmd_fit(
            &curves,
            &out,
            &FitOptions {
                allow_nonmonotone,
                amortize_startup,
            },
        ),
        Command::Solve { fleet, solver, out } => {
            cmd_solve(&fleet.input(), &solver.config(), &out)
        }
        Command::Compare {
            fleet,
            solver,
            n_cap,
            out,
        } => cmd_compare(&fleet.input(), &solver.config(), n_cap, &out),
        Command::Bench {
            fleet,
            solver,
            multipliers,
            methods,
            trials,
            seed,
            deviation,
            out,
        } => {
            let methods: Vec<Method> = methods.into_iter().map(Into::into).collect();
            cmd_bench(
                &fleet.input(),
                &multipliers,
                &methods,
                trials,
                seed,
                deviation,
                &solver.config(),
                &out,
            )
        }
        Command::Replicate {
            fleet,
            multiplier,
            deviation,
            seed,
            out,
        } => cmd_replicate(&fleet.input(), multiplier, deviation, seed, &out),
        Command::SweepStats {
            fleet,
            solver,
            load_start,
            load_step,
            load_end,
            out,
        } => cmd_sweep_stats(
            &fleet.input(),
            load_start,
            load_step,
            load_end,
            &solver.config(),
            &out,
        ),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
