//! Command-line entry point: a thin argument-parsing layer over the
//! library functions in `nudft_cli`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nudft_cli::config::{self, CaseKind, ExperimentKind, Overrides};
use nudft_cli::output::{emit, resolve_output};
use nudft_cli::solve_io::{self, SolveOptions};
use nudft_cli::{experiments, CliError};

/// Structured least-squares solvers for nonuniform discrete Fourier
/// transforms: experiment sweeps and a one-shot solve.
#[derive(Parser)]
#[command(name = "nudft", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Truncation error of the windowed frequency expansion
    ApproxError(SweepArgs),
    /// Direct-solver stage timings and residuals
    DirectSolve(SweepArgs),
    /// Plain vs preconditioned conjugate gradients
    IterativeCompare(SweepArgs),
    /// Numerical rank of an off-diagonal interpolation block
    RankProbe(SweepArgs),
    /// Per-factor error decomposition
    ErrorDecomp(SweepArgs),
    /// Solve one instance read from a file
    Solve(SolveArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Oversampling ratio M/N
    #[arg(long)]
    m_ratio: Option<usize>,
    /// Comma-separated problem sizes
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Comma-separated frequency jitter amplitudes
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Sample-point jitter amplitude
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated expansion window half-widths
    #[arg(long = "R", value_delimiter = ',')]
    window: Option<Vec<usize>>,
    /// Comma-separated compression tolerances
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Interpolation rank rule: k = ceil(k_factor * log2 N)
    #[arg(long)]
    k_factor: Option<f64>,
    /// Leaf size of the compression trees
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Comma-separated instance seeds
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Iterative solver relative tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Iterative solver iteration cap
    #[arg(long)]
    maxit: Option<usize>,
    /// Probes per randomized error estimate
    #[arg(long)]
    probes: Option<usize>,
    /// Timing repeats; each reported time is the median
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated point families: perturbed, random
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    /// Worker threads; kernels are single-threaded, so values above 1
    /// are accepted for interface compatibility but have no effect
    #[arg(long)]
    threads: Option<usize>,
    /// Lift the default problem-size cap
    #[arg(long)]
    full: bool,
    /// Output CSV path, resolved under $NUDFT_OUTPUT_DIR when relative;
    /// stdout when omitted
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl SweepArgs {
    fn into_overrides(self) -> Result<(Option<PathBuf>, Overrides), CliError> {
        let cases = match self.cases {
            Some(labels) => Some(
                labels
                    .iter()
                    .map(|l| CaseKind::parse(l))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let over = Overrides {
            m_ratio: self.m_ratio,
            n_list: self.n_list,
            alpha_list: self.alpha,
            beta: self.beta,
            window_list: self.window,
            rho_list: self.rho,
            k_factor: self.k_factor,
            leaf_size: self.leaf_size,
            seeds: self.seed,
            tolerance: self.tol,
            max_iterations: self.maxit,
            probes: self.probes,
            repeats: self.repeats,
            cases,
            threads: self.threads,
            full: self.full.then_some(true),
            output: self.output,
        };
        Ok((self.config, over))
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Input file: `.csv` tagged rows, or little-endian binary otherwise
    #[arg(long, short)]
    input: PathBuf,
    /// Output file for the recovered coefficients (same format rule)
    #[arg(long, short)]
    output: PathBuf,
    /// Compression tolerance
    #[arg(long, default_value_t = nudft_core::inudft::RHO_DIRECT)]
    rho: f64,
    /// Interpolation rank rule: k = ceil(k_factor * log2 N)
    #[arg(long, default_value_t = 5.0)]
    k_factor: f64,
    /// Expansion window half-width
    #[arg(long = "R", default_value_t = 0)]
    window: usize,
    /// Leaf size of the compression trees
    #[arg(long, default_value_t = 128)]
    leaf_size: usize,
    /// Seed for the randomized sampling
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ApproxError(args) => run_sweep(ExperimentKind::ApproxError, args),
        Command::DirectSolve(args) => run_sweep(ExperimentKind::DirectSolve, args),
        Command::IterativeCompare(args) => run_sweep(ExperimentKind::IterativeCompare, args),
        Command::RankProbe(args) => run_sweep(ExperimentKind::RankProbe, args),
        Command::ErrorDecomp(args) => run_sweep(ExperimentKind::ErrorDecomposition, args),
        Command::Solve(args) => run_solve(args),
    }
}

fn run_sweep(kind: ExperimentKind, args: SweepArgs) -> Result<(), CliError> {
    let (config_path, cli_over) = args.into_overrides()?;
    let file_over = config_path
        .as_deref()
        .map(Overrides::from_file)
        .transpose()?;
    let cfg = config::resolve(kind, file_over, cli_over)?;
    if cfg.threads != 1 {
        eprintln!(
            "note: kernels are single-threaded; --threads {} has no effect",
            cfg.threads
        );
    }
    let table = experiments::run(&cfg)?;
    emit(&table, cfg.output.as_deref())?;
    Ok(())
}

fn run_solve(args: SolveArgs) -> Result<(), CliError> {
    let input = solve_io::read_input(&args.input)?;
    let opts = SolveOptions {
        rho: args.rho,
        k_factor: args.k_factor,
        window: args.window,
        leaf_size: args.leaf_size,
        seed: args.seed,
    };
    let coefficients = solve_io::run_solve(&input, &opts)?;
    let out = resolve_output(&args.output);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    solve_io::write_output(&out, &coefficients)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
