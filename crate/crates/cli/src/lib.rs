//! Command-line driver for the two-speed laboratory.
//!
//! Exit codes: 0 ok, 1 config, 2 assumption, 3 numerical, 4 consistency.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Context, Outcome};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "twospeed", version, about = "Two-speed transport-reaction laboratory")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Seed of the random dissipativity probe.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Run even when the field assumptions fail.
    #[arg(long, global = true)]
    pub allow_degenerate: bool,

    /// Also write the dense generator to `generator.csv` (spectrum, report).
    #[arg(long, global = true)]
    pub export_matrix: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the assumptions on b1, b2, sigma.
    Validate,
    /// Continuous steady state; writes steady.csv.
    Steady,
    /// Eigenvalues of the discretized generator; writes spectrum.csv.
    Spectrum,
    /// Resolvent gap sweep and semigroup bound; writes psi_sweep.csv.
    Psi,
    /// Time integration and decay fit; writes timeseries.csv.
    Evolve,
    /// Oscillatory-integral sweep; writes lemma.csv.
    Lemma,
    /// Full pipeline with consistency checks; writes <name>.report.json.
    Report,
}

impl Cli {
    pub fn execute(&self) -> CliResult<Outcome> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config <PATH> is required".into()))?;
        let config = RunConfig::load(path)?;
        let mut ctx = Context::new(config, self.out.clone(), self.seed);
        ctx.allow_degenerate = self.allow_degenerate;
        ctx.export_matrix = self.export_matrix;
        match self.command {
            Command::Validate => commands::cmd_validate(&ctx),
            Command::Steady => commands::cmd_steady(&ctx),
            Command::Spectrum => commands::cmd_spectrum(&ctx),
            Command::Psi => commands::cmd_psi(&ctx),
            Command::Evolve => commands::cmd_evolve(&ctx),
            Command::Lemma => commands::cmd_lemma(&ctx),
            Command::Report => commands::cmd_report(&ctx),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.execute() {
        Ok(outcome) => {
            let _ = writeln!(stdout, "{}", outcome.summary);
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
