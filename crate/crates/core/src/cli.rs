//! Command-line front end.
//!
//! Subcommands:
//!
//! * `run` evaluates one agent with one seed and writes the trace JSON.
//! * `grid` writes the ground-truth lattice of a registered objective as CSV.
//! * `eval` scores a trace against a grid and writes `evaluations,f2`.
//! * `bench` runs several agents over several seeds and writes a report JSON
//!   plus a long-format curves CSV.
//! * `dynamics` flattens a trace into `order,x1..xd,y` rows.
//!
//! Trace JSON fields: `config` (algorithm, objective, bounds, delta, search),
//! `seed`, `records` (`order`, `x`, `y`), `events` (one per search iteration)
//! and `meta` (wall-clock timestamps and crate version). Everything except
//! `meta` is a deterministic function of the flags.
//!
//! Objectives are looked up by name; `grid:<path>` loads a CSV lattice with
//! header `x1,x2,value` and interpolates it bilinearly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{run_algorithm, run_benchmark, score_trace, write_dynamics_csv, BenchmarkSpec};
use crate::coverage::{GroundTruthGrid, DEFAULT_GRID_RESOLUTION};
use crate::density::DensityConfig;
use crate::error::{Error, Result};
use crate::partition::PartitionParams;
use crate::problem::{registry_lookup, Objective};
use crate::search::{Algorithm, Exploration, LeafReference, RunTrace, SearchConfig};

#[derive(Parser, Debug)]
#[command(
    name = "lambda",
    version,
    about = "Black-box coverage search and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one agent with one seed and write its trace.
    Run(RunArgs),
    /// Write the ground-truth lattice of an objective.
    Grid(GridArgs),
    /// Score a trace at a list of checkpoints.
    Eval(EvalArgs),
    /// Run the benchmark protocol over several agents and seeds.
    Bench(BenchArgs),
    /// Write a trace as per-record rows for plotting.
    Dynamics(DynamicsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReferenceArg {
    Root,
    Parent,
}

/// Search hyperparameters shared by `run` and `bench`.
#[derive(Args, Debug)]
struct SearchArgs {
    /// Total objective evaluations.
    #[arg(long, default_value_t = 1500)]
    budget: usize,
    /// Sobol points evaluated before the first tree.
    #[arg(long, default_value_t = 100)]
    init_count: usize,
    /// Leaves sampled per iteration.
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = 5)]
    samples_per_leaf: usize,
    /// Fixed exploration factor; overrides --cp-fraction.
    #[arg(long)]
    cp: Option<f64>,
    /// Exploration factor as a fraction of the observed value range.
    #[arg(long, default_value_t = 0.15)]
    cp_fraction: f64,
    /// Density reference for leaf scores.
    #[arg(long, value_enum, default_value = "root")]
    leaf_reference: ReferenceArg,
    #[arg(long, default_value_t = 1)]
    retreeify_every: usize,
    /// Rejection-sampling proposals per requested in-leaf point.
    #[arg(long, default_value_t = 100)]
    attempts_per_sample: usize,
    #[arg(long, default_value_t = 20)]
    min_split: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Minimum class-balanced training accuracy for a split.
    #[arg(long, default_value_t = 0.5)]
    min_accuracy: f64,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Neighbor rank that sets the density bandwidth.
    #[arg(long, default_value_t = 10)]
    knn: usize,
    /// Inserts between density index rebuilds.
    #[arg(long, default_value_t = 256)]
    rebuild_interval: usize,
    /// Bandwidth floor as a fraction of the domain diameter.
    #[arg(long, default_value_t = 1e-6)]
    min_bandwidth_fraction: f64,
}

impl SearchArgs {
    fn config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            budget: self.budget,
            init_count: self.init_count,
            beam_width: self.beam_width,
            samples_per_leaf: self.samples_per_leaf,
            exploration: match self.cp {
                Some(cp) => Exploration::Fixed(cp),
                None => Exploration::RangeFraction(self.cp_fraction),
            },
            leaf_reference: match self.leaf_reference {
                ReferenceArg::Root => LeafReference::Root,
                ReferenceArg::Parent => LeafReference::Parent,
            },
            retreeify_every: self.retreeify_every,
            attempts_per_sample: self.attempts_per_sample,
            seed,
            partition: PartitionParams {
                min_split: self.min_split,
                max_depth: self.max_depth,
                min_separator_accuracy: self.min_accuracy,
                ridge: self.ridge,
            },
            density: DensityConfig {
                k: self.knn,
                rebuild_interval: self.rebuild_interval,
                min_bandwidth_fraction: self.min_bandwidth_fraction,
            },
            ..SearchConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value = "holder-table")]
    objective: String,
    #[arg(long, default_value_t = 18.0)]
    delta: f64,
    /// lambda, lambda-ucb1, rs or sobol.
    #[arg(long, default_value = "lambda")]
    algo: Algorithm,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value = "holder-table")]
    objective: String,
    /// Lattice points per axis, endpoints included.
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Ground-truth CSV from `grid`; built from the trace's objective when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    resolution: usize,
    /// Defaults to the delta stored in the trace.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated evaluation counts; defaults to every 100 and the trace length.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "holder-table")]
    objective: String,
    #[arg(long, default_value_t = 18.0)]
    delta: f64,
    #[arg(long, value_delimiter = ',', default_value = "lambda,rs,sobol")]
    algos: Vec<Algorithm>,
    /// Seeds 0..repeats when --seeds is not given.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Defaults to every 100 evaluations up to the budget.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
    /// F2 level for the evaluations-to-threshold table.
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    resolution: usize,
    /// Report JSON path; the summary goes to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Long-format curves CSV path.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct DynamicsArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the subcommand.
/// Returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Dynamics(a) => dynamics(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_grid(
    path: Option<&Path>,
    objective: &Objective,
    resolution: usize,
) -> Result<GroundTruthGrid> {
    match path {
        Some(p) => GroundTruthGrid::read_csv(p),
        None => GroundTruthGrid::uniform(objective, resolution),
    }
}

fn every_hundred(budget: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = (1..=budget / 100).map(|i| i * 100).collect();
    if cps.last() != Some(&budget) {
        cps.push(budget);
    }
    cps
}

fn run(a: RunArgs) -> Result<()> {
    let objective = registry_lookup(&a.objective)?;
    let (trace, failure) =
        match run_algorithm(a.algo, &objective, a.delta, &a.search.config(a.seed)) {
            Ok(t) => (t, None),
            Err(Error::Aborted { partial, source }) => (*partial, Some(*source)),
            Err(e) => return Err(e),
        };
    let mut out = output(a.out.as_deref())?;
    out.write_all(trace.to_json()?.as_bytes())?;
    out.flush()?;
    match failure {
        // The partial trace is already written.
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn grid(a: GridArgs) -> Result<()> {
    let objective = registry_lookup(&a.objective)?;
    let grid = GroundTruthGrid::uniform(&objective, a.resolution)?;
    grid.write_csv(output(a.out.as_deref())?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let trace = RunTrace::read(&a.trace)?;
    let delta = a.delta.unwrap_or(trace.config.delta);
    let grid = match &a.grid {
        Some(p) => GroundTruthGrid::read_csv(p)?,
        None => {
            let objective = registry_lookup(&trace.config.objective)?;
            GroundTruthGrid::uniform(&objective, a.resolution)?
        }
    };
    let checkpoints = if a.checkpoints.is_empty() {
        every_hundred(trace.len())
    } else {
        a.checkpoints
    };
    if let Some(&k) = checkpoints.iter().find(|&&k| k > trace.len()) {
        return Err(Error::Config(format!(
            "checkpoint {k} exceeds the trace length {}",
            trace.len()
        )));
    }
    let curve = score_trace(&trace, &grid, delta, &checkpoints)?;
    curve.write_csv(output(a.out.as_deref())?)
}

fn bench(a: BenchArgs) -> Result<()> {
    let objective = registry_lookup(&a.objective)?;
    let grid = load_grid(a.grid.as_deref(), &objective, a.resolution)?;
    let seeds = if a.seeds.is_empty() {
        BenchmarkSpec::default_seeds(a.repeats)
    } else {
        a.seeds
    };
    let spec = BenchmarkSpec {
        algorithms: a.algos,
        delta: a.delta,
        seeds,
        checkpoints: if a.checkpoints.is_empty() {
            every_hundred(a.search.budget)
        } else {
            a.checkpoints
        },
        threshold: a.threshold,
        search: a.search.config(0),
    };
    let report = run_benchmark(&objective, &grid, &spec)?;
    print!("{}", report.summary());
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(p) = &a.curves {
        report.write_curves_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn dynamics(a: DynamicsArgs) -> Result<()> {
    let trace = RunTrace::read(&a.trace)?;
    write_dynamics_csv(&trace, output(a.out.as_deref())?)
}
