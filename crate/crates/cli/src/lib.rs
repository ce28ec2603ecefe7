//! The `moescale` command line: argument parsing, dispatch and exit codes.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on data or fit
//! errors. Data and fit errors print exactly one line to stderr of the form
//! `moescale-error[<kind>]: <message>`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use moescale::artifact::{write_json, ReportBundle};

mod commands;
pub mod validate;

pub use commands::{FitLawArgs, FitSurfaceArgs, FlopsArgs, FrontierArgs, ReportArgs, SynthArgs};
pub use validate::ValidateArgs;

pub const ERROR_PREFIX: &str = "moescale-error";

#[derive(Parser, Debug)]
#[command(name = "moescale", version, about = "Scaling-law fitting for sparse Mixture-of-Experts language models")]
pub struct Cli {
    /// Worker threads for parallel fits (default: all cores)
    #[arg(long, global = true, env = "MOESCALE_THREADS")]
    pub threads: Option<usize>,

    /// Seed for every random choice [default: 0]
    #[arg(long, global = true, env = "MOESCALE_SEED")]
    pub seed: Option<u64>,

    /// Also write a report bundle (inputs, outputs, metrics) to this path
    #[arg(long, global = true, env = "MOESCALE_BUNDLE")]
    pub bundle: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parameter and FLOP accounting for one architecture config
    Flops(FlopsArgs),
    /// Fit isoFLOP polynomial surfaces to training runs
    FitSurface(FitSurfaceArgs),
    /// Fit the parametric scaling law to training runs
    FitLaw(FitLawArgs),
    /// Compute-optimal sizes and sparsities from a fit artifact
    Frontier(FrontierArgs),
    /// Generate synthetic runs from a known loss function
    Synth(SynthArgs),
    /// Run the built-in checks on bundled synthetic designs
    Validate(ValidateArgs),
    /// Merge metrics from fit artifacts or report bundles
    Report(ReportArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] moescale::Error),

    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use moescale::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Core(e) => match e {
                E::InvalidConfig(_) => "invalid_config",
                E::Range(_) => "range",
                E::NoFeasibleConfig(_) => "no_feasible_config",
                E::Load { .. } => "load",
                E::Format { .. } => "format",
                E::SingularTransform(_) => "singular_transform",
                E::SingularFit(_) => "singular_fit",
                E::InsufficientData(_) => "insufficient_data",
                E::InsufficientVariation(_) => "insufficient_variation",
                E::Domain(_) => "domain",
                E::Evaluation(_) => "evaluation",
                E::Fit(_) => "fit",
                E::Optimizer(_) => "optimizer",
                E::Io(_) => "io",
                E::Json(_) => "json",
            },
        }
    }

    /// The single stderr line for exit status 1.
    pub fn line(&self) -> String {
        let msg: String = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("{ERROR_PREFIX}[{}]: {msg}", self.kind())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) struct Context {
    pub seed: u64,
    pub seed_given: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(e) => {
            eprintln!("{}", e.line());
            1
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let ctx = Context { seed: cli.seed.unwrap_or(0), seed_given: cli.seed.is_some() };
    let bundle = pool.install(|| dispatch(&cli.command, &ctx))?;
    if let Some(path) = &cli.bundle {
        write_json(path, &bundle)?;
    }
    Ok(())
}

fn dispatch(command: &Command, ctx: &Context) -> CliResult<ReportBundle> {
    match command {
        Command::Flops(a) => commands::flops(a),
        Command::FitSurface(a) => commands::fit_surface(a, ctx),
        Command::FitLaw(a) => commands::fit_law(a, ctx),
        Command::Frontier(a) => commands::frontier(a),
        Command::Synth(a) => commands::synth(a, ctx),
        Command::Validate(a) => validate::validate(a, ctx),
        Command::Report(a) => commands::report(a),
    }
}
