//! Command-line front end.
//!
//! Every command renders its results in memory first ([`CommandOutput`]);
//! the binary then prints stdout and writes the files. Outputs depend only on
//! the inputs, so two runs with the same arguments are byte-identical.

pub mod commands;
pub mod model_file;

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PR_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STABILITY: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

pub const DEFAULT_OUT_DIR: &str = "qnet-out";

#[derive(Debug, Parser)]
#[command(name = "qnet", version, about = "Realizability and performance analysis of periodic linear quantum networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory for CSV/JSON outputs (created if needed).
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the physical realizability conditions of a model.
    CheckPr(CheckPrArgs),
    /// Steady cost per site for a fragment or for the infinite network.
    Cost(CostArgs),
    /// Per-mode spectra on a frequency grid.
    Spectrum(SpectrumArgs),
    /// Integrate the moment equations of a fragment in time.
    Simulate(SimulateArgs),
    /// Write a seeded random model file.
    Gen(GenArgs),
    /// Finite-fragment costs against the infinite-network limit.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckPrArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Sites per axis for the frequency form.
    #[arg(long = "N")]
    pub sites: Option<String>,
    /// 1, 2 or both.
    #[arg(long)]
    pub theorem: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Sites per axis, or `limit`.
    #[arg(long = "N")]
    pub sites: Option<String>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Points per axis.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long = "N")]
    pub sites: Option<String>,
    /// Final time, or `steady`.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Number of recorded intervals for a fixed horizon.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Integrate the assembled ring instead of the mode equations.
    #[arg(long)]
    pub fullchain: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m0: usize,
    /// Comma-separated forward channel counts, one per axis.
    #[arg(long = "m-plus", default_value = "1")]
    pub m_plus: String,
    #[arg(long = "m-minus", default_value = "1")]
    pub m_minus: String,
    /// random, pr-consistent or aliasing-witness.
    #[arg(long, default_value = "pr-consistent")]
    pub kind: String,
    /// Decay of the geometric weights written to the file.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Comma-separated fragment sizes.
    #[arg(long = "N", default_value = "8,16,32,64")]
    pub sites: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
    pub code: i32,
}

impl CommandOutput {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_files(&self, dir: &Path) -> io::Result<()> {
        if self.files.is_empty() {
            return Ok(());
        }
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_)
        | Error::Config(_)
        | Error::Dimension(_)
        | Error::Domain(_)
        | Error::UnsupportedFragment(_)
        | Error::Aliasing { .. } => EXIT_INPUT,
        Error::Stability { .. } => EXIT_STABILITY,
        Error::Inconclusive(_)
        | Error::Numeric(_)
        | Error::Solvability { .. }
        | Error::Integration { .. }
        | Error::Resource(_) => EXIT_INCONCLUSIVE,
    }
}

pub fn run(cli: &Cli) -> CommandOutput {
    let result = match &cli.command {
        Command::CheckPr(a) => commands::check_pr(a),
        Command::Cost(a) => commands::cost(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Gen(a) => commands::gen(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    result.unwrap_or_else(|e| CommandOutput { stderr: format!("error: {e}\n"), code: exit_code(&e), ..Default::default() })
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> (CommandOutput, Option<PathBuf>)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => {
            let dir = match (&cli.out_dir, &cli.command) {
                (Some(d), _) => Some(d.clone()),
                (None, Command::Gen(_)) => None,
                (None, _) => Some(PathBuf::from(DEFAULT_OUT_DIR)),
            };
            (run(&cli), dir)
        }
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let out = if e.use_stderr() {
                CommandOutput { stderr: text, code, ..Default::default() }
            } else {
                CommandOutput { stdout: text, code, ..Default::default() }
            };
            (out, None)
        }
    }
}
