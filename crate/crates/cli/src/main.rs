//! `concept-cmdp` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use concept_cmdp::transfer::ConceptMethod;

use commands::{CliError, Ctx};

#[derive(Parser, Debug)]
#[command(name = "concept-cmdp", version, about = "Concept learning and transfer for tabular contextual MDPs")]
struct Cli {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (a directory for `transfer`). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. CONCEPT_CMDP_THREADS takes precedence when set.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a built-in environment to an environment file.
    MakeEnv(MakeEnvArgs),
    /// Solve an environment exactly.
    Solve(SolveArgs),
    /// Learn a concept classifier.
    LearnConcepts(LearnArgs),
    /// Check the regret and information bounds.
    VerifyBounds(VerifyArgs),
    /// Run trust-region Monte Carlo control over concepts.
    Trmc(TrmcArgs),
    /// Run the transfer experiment between two environments.
    Transfer(TransferArgs),
    /// Bound chain and concept diagnostics for one classifier.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct MakeEnvArgs {
    #[arg(value_enum)]
    pub kind: EnvKind,
    /// Reward of the long route (rental car).
    #[arg(long, default_value_t = 0.5)]
    pub long_route: f64,
    /// Reward of the short route (rental car).
    #[arg(long, default_value_t = 1.0)]
    pub short_route: f64,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    #[arg(long, default_value_t = 2)]
    pub contexts: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Perceptual signatures per grid cell.
    #[arg(long, default_value_t = 2)]
    pub signatures: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    RentalCar,
    Random,
    SeekAvoid,
    MazeTrain,
    MazeTest,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// Solve only this context.
    #[arg(long)]
    pub context: Option<usize>,
    /// Softening temperature; defaults to 0.05 times the largest reward magnitude.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, required_unless_present = "factor_sizes", conflicts_with = "factor_sizes")]
    pub n_concepts: Option<usize>,
    /// Comma-separated factor sizes of a factored classifier (gradient only).
    #[arg(long, value_delimiter = ',')]
    pub factor_sizes: Option<Vec<usize>>,
    /// exhaustive, local, gradient, likelihood or context-free.
    #[arg(long, default_value = "local")]
    pub method: ConceptMethod,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Check one environment instead of random instances.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub env: Option<PathBuf>,
    /// Classifier to check on `--env`, besides identity and constant.
    #[arg(long, requires = "env")]
    pub classifier: Option<PathBuf>,
    /// Number of random instances.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    #[arg(long, default_value_t = 2)]
    pub contexts: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 3)]
    pub concepts: usize,
    /// Random abstract policies compared against the marginal one.
    #[arg(long, default_value_t = 200)]
    pub policies: usize,
    /// Build the joint from a noise-perturbed reference policy (negative control).
    #[arg(long)]
    pub tamper: bool,
}

#[derive(Args, Debug)]
pub struct TrmcArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// JSON file with TRMC settings; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// JSON file with experiment settings; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    commands::configure_threads(cli.threads)?;
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::MakeEnv(a) => commands::make_env(&ctx, &a),
        Command::Solve(a) => commands::solve(&ctx, &a),
        Command::LearnConcepts(a) => commands::learn_concepts(&ctx, &a),
        Command::VerifyBounds(a) => commands::verify_bounds(&ctx, &a),
        Command::Trmc(a) => commands::trmc(&ctx, &a),
        Command::Transfer(a) => commands::transfer(&ctx, &a),
        Command::Report(a) => commands::report(&ctx, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
