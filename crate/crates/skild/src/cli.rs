//! Argument parsing and dispatch for the `skild` binary.

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skild_core::ising::BETA_C;
use skild_core::sde::DEFAULT_CORRECTOR_STEP;

use crate::commands;
use crate::error::Result;

/// Version string printed by `--version`; the schema number tracks
/// [`crate::config::SCHEMA_VERSION`].
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

#[derive(Debug, Parser)]
#[command(name = "skild", version = VERSION, about = "Frequency-space diffusion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate or fit per-mode variance spectra.
    #[command(subcommand)]
    Spectrum(SpectrumCommand),
    /// Inspect a schedule on a frequency grid.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
    /// Run a reverse sampler.
    Sample(SampleArgs),
    /// Ising data generation and exact enumeration.
    #[command(subcommand)]
    Ising(IsingCommand),
    /// Connected four-point correlator with bootstrap intervals.
    Kappa4(Kappa4Args),
    /// Compare surviving signal with a bicubic down-up reference.
    ValidateBicubic(BicubicArgs),
    /// First timestep whose effective resolution drops to a target.
    SrStart(SrStartArgs),
}

#[derive(Debug, Subcommand)]
pub enum SpectrumCommand {
    /// Per-mode variance of the DCT coefficients of a dataset.
    Estimate {
        /// Dataset manifest (or its directory).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit the regularized power law to a spectrum.
    Fit {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCommand {
    /// CSV of n, t, λ, effective resolution and SNR deciles per timestep.
    Inspect {
        /// Schedule JSON, or `preset:<name>`.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        grid: Grid,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Ancestral,
    Em,
    Ode,
    Pc,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub spec: String,
    /// `spectrum.skft` or a `params.json` power law.
    #[arg(long)]
    pub s0: PathBuf,
    /// `gaussian` or `cheat:<x0.skft>`.
    #[arg(long)]
    pub denoiser: DenoiserChoice,
    #[arg(long, value_enum, default_value_t = Sampler::Ancestral)]
    pub sampler: Sampler,
    /// Defaults to N.
    #[arg(long)]
    pub start_n: Option<usize>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Starting fields for `--start-n` below N; the cheat target is used
    /// when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Field size when `--s0` is a params file and no field is given.
    #[arg(long)]
    pub grid: Option<Grid>,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub corrector_iters: usize,
    #[arg(long, default_value_t = DEFAULT_CORRECTOR_STEP)]
    pub corrector_step: f64,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum IsingCommand {
    /// Wolff cluster dataset: one SKFT per saved configuration.
    Gen {
        #[arg(long = "L")]
        side: usize,
        #[arg(long, default_value_t = 8)]
        chains: usize,
        #[arg(long, default_value_t = 2000)]
        burn_in: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `crit` or a number.
        #[arg(long, default_value = "crit")]
        beta: Beta,
    },
    /// Exact Boltzmann expectations by enumerating every configuration.
    Enum {
        #[arg(long = "L")]
        side: usize,
        #[arg(long, default_value = "crit")]
        beta: Beta,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        sides: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Kappa4Args {
    /// Dataset manifest (or its directory).
    #[arg(long)]
    pub inputs: PathBuf,
    /// Defaults to 1,2,4,…,64 restricted to sides below L.
    #[arg(long, value_delimiter = ',')]
    pub sides: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BicubicArgs {
    /// Images in [0, 1]: one field or a `[M, C, H, W]` batch.
    #[arg(long)]
    pub x0: PathBuf,
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.1,0.05,0.01,0.005")]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrStartArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub target_res: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
}

/// `HxW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("`{v}` is not a positive integer"))
        };
        Ok(Self {
            height: parse(h)?,
            width: parse(w)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserChoice {
    Gaussian,
    Cheat(PathBuf),
}

impl FromStr for DenoiserChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "gaussian" => Ok(Self::Gaussian),
            Some(("cheat", path)) if !path.is_empty() => Ok(Self::Cheat(PathBuf::from(path))),
            _ => Err(format!("expected `gaussian` or `cheat:<x0.skft>`, got `{s}`")),
        }
    }
}

/// Inverse temperature: `crit` for `β_c` or a non-negative number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(pub f64);

impl FromStr for Beta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "crit" {
            return Ok(Self(BETA_C));
        }
        match s.parse::<f64>() {
            Ok(b) if b >= 0.0 => Ok(Self(b)),
            _ => Err(format!("expected `crit` or a non-negative number, got `{s}`")),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let command_line: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &command_line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Spectrum(SpectrumCommand::Estimate { input, output, threads }) => {
            commands::spectrum_estimate(&input, &output, threads, argv)
        }
        Command::Spectrum(SpectrumCommand::Fit { spectrum, out }) => commands::spectrum_fit(&spectrum, &out, argv),
        Command::Schedule(ScheduleCommand::Inspect { spec, grid, csv, tau }) => {
            commands::schedule_inspect(&spec, grid, &csv, tau, argv)
        }
        Command::Sample(args) => commands::sample(&args, argv),
        Command::Ising(IsingCommand::Gen {
            side,
            chains,
            burn_in,
            samples,
            seed,
            out,
            beta,
        }) => commands::ising_gen(side, chains, burn_in, samples, seed, beta.0, &out, argv),
        Command::Ising(IsingCommand::Enum { side, beta, sides, out }) => {
            commands::ising_enum(side, beta.0, &sides, &out, argv)
        }
        Command::Kappa4(args) => commands::kappa4(&args, argv),
        Command::ValidateBicubic(args) => commands::validate_bicubic(&args, argv),
        Command::SrStart(args) => commands::sr_start(&args),
    }
}
