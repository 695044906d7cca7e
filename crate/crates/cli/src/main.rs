mod commands;
mod render;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "coarsemom", version, about = "Moment estimation for systems of ordered-response equations")]
struct Cli {
    /// Run every engine on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a model and write a results document.
    Fit(FitArgs),
    /// Tabulate the residual covariance f(ρ) for a pair of grids.
    GridCov(GridCovArgs),
    /// Render a results document.
    Report(ReportArgs),
    /// Maximum-likelihood reference fits.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Dgp {
    /// Four equations, four correlated regressors, 2–4 categories.
    Benchmark,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub dgp: Option<Dgp>,
    /// JSON data-generating configuration.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Also write latent responses and errors.
    #[arg(long)]
    pub latent_out: Option<std::path::PathBuf>,
    /// Also write the matching model JSON.
    #[arg(long)]
    pub model_out: Option<std::path::PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LatentMode {
    Exact,
    Mc,
    None,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// Cap on weight-update iterations.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: Option<u64>,
    /// Parameter-change tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub no_demean: bool,
    #[arg(long, value_enum, default_value_t = LatentMode::Exact)]
    pub latent_cov: LatentMode,
    /// Simulated pairs per observation in Monte Carlo matching.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub draws: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CovModeArg {
    Exact,
    Mc,
}

#[derive(Args, Debug)]
pub struct GridCovArgs {
    /// `left`, `middle`, `right`, or explicit cut-points `c1,c2;d1,d2`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", allow_hyphen_values = true)]
    pub rhos: String,
    /// Simulated pairs in Monte Carlo mode.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CovModeArg::Exact)]
    pub mode: CovModeArg,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: std::path::PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Subcommand, Debug)]
pub enum OracleCommand {
    /// Ordered probit for one equation.
    Op {
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long)]
        model: std::path::PathBuf,
        /// 0-based equation index.
        #[arg(long, default_value_t = 0)]
        equation: usize,
        #[arg(long)]
        no_demean: bool,
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Bivariate ordered probit for two equations.
    Biprobit {
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long)]
        model: std::path::PathBuf,
        /// 0-based equation indices, e.g. `0,1`.
        #[arg(long, default_value = "0,1")]
        equations: String,
        #[arg(long)]
        no_demean: bool,
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("COARSEMOM_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring COARSEMOM_THREADS={v:?}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    let exec = if cli.sequential {
        coarsemom::Execution::Sequential
    } else {
        coarsemom::Execution::Parallel
    };
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(a, exec),
        Command::Fit(a) => commands::fit(a, exec),
        Command::GridCov(a) => commands::grid_cov(a, exec),
        Command::Report(a) => commands::report(a),
        Command::Oracle(o) => commands::oracle(o, exec),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
