//! `mamforge` command-line front end.

mod analyze;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use mamforge_core::{Error, ErrorKind};

pub const EXIT_USAGE: u8 = 64;
pub const EXIT_CONFIG: u8 = 65;
pub const EXIT_DATA: u8 = 66;
pub const EXIT_NUMERICAL: u8 = 70;

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    pub fn category(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => match e.kind() {
                ErrorKind::Config => "config",
                ErrorKind::Data => "data",
                ErrorKind::Numerical => "numerical",
            },
        }
    }

    pub fn code(&self) -> u8 {
        match self.category() {
            "usage" => EXIT_USAGE,
            "config" => EXIT_CONFIG,
            "data" => EXIT_DATA,
            _ => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(
    name = "mamforge",
    version,
    about = "Neural-network interatomic potentials and electrode chemo-mechanics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by subcommands that read configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set opt.lr=0.5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Where to write the run manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to labelled structures.
    Train(commands::TrainArgs),
    /// Energies, forces, charges and stress for structures.
    Predict(commands::PredictArgs),
    /// Closed-form analyzers and the elastic-constant driver.
    Analyze(analyze::AnalyzeArgs),
    /// Charge/discharge cycling with stress traces.
    Cycle(commands::CycleArgs),
    /// Run the built-in validation suite.
    Selftest(commands::SelftestArgs),
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("MAMFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MAMFORGE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let parsed = Cli::command()
        .mut_subcommand("analyze", analyze::add_field_args)
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m).map(|c| (c, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Analyze(a) => {
            let fields = matches
                .subcommand_matches("analyze")
                .map(analyze::collect_fields)
                .unwrap_or_default();
            analyze::run(a, fields)
        }
        Command::Cycle(a) => commands::cycle(a),
        Command::Selftest(a) => commands::selftest(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category(), f.message());
            if let Failure::Usage(_) = f {
                eprintln!("run `mamforge --help` for usage");
            }
            ExitCode::from(f.code())
        }
    }
}
