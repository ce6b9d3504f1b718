//! Command-line driver for `bidiff-core`: file formats, scenario files,
//! invariant-check suites and the `se3-diffuse` subcommands.

pub mod check;
pub mod commands;
pub mod format;
pub mod io;
pub mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use bidiff_core::Integrator;
use clap::{Parser, Subcommand};

use crate::check::{CheckOptions, Suite};
use crate::commands::{DenoiseArgs, ScoreSource, UsageError};

/// Exit status for invalid arguments.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for a failed check or a runtime error.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "se3-diffuse", version, about = "Bi-equivariant denoising diffusion on SE(3)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward-diffuse demonstration poses.
    Diffuse {
        #[arg(long)]
        scenario: PathBuf,
        /// Root seed; defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Diffusion time; defaults to the scenario value.
        #[arg(long)]
        t: Option<f64>,
        /// Number of samples.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run annealed Langevin denoising chains.
    Denoise {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        chains: usize,
        #[arg(long, value_enum, default_value_t = ScoreSource::Oracle)]
        source: ScoreSource,
        /// Descriptor parameter file (TOML); overrides the scenario's model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = Integrator::Exact)]
        integrator: Integrator,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run invariant suites and report the largest error per check.
    Check {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt the score transport matrix (negative control).
        #[arg(long, hide = true)]
        perturb_adjoint: bool,
    },
    /// Draw rotations from the isotropic Gaussian on SO(3).
    SampleIgso3 {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the bundled mug-on-hanger scenario into a directory.
    GenScenario {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Diffuse {
            scenario,
            seed,
            t,
            n,
            out,
        } => commands::cmd_diffuse(&scenario, t, n, seed, &out)?,
        Command::Denoise {
            scenario,
            seed,
            chains,
            source,
            model,
            integrator,
            out,
        } => {
            let args = DenoiseArgs {
                source,
                model,
                chains,
                seed,
                integrator,
            };
            commands::cmd_denoise(&scenario, &args, &out)?;
        }
        Command::Check {
            suite,
            seed,
            out,
            perturb_adjoint,
        } => {
            let opts = CheckOptions { seed, perturb_adjoint };
            if !commands::cmd_check(suite, &opts, out.as_deref())? {
                return Ok(ExitCode::from(EXIT_FAILURE));
            }
        }
        Command::SampleIgso3 { eps, n, seed, out } => {
            commands::cmd_sample_igso3(eps, n, seed, &out)?;
        }
        Command::GenScenario { out, seed } => {
            commands::cmd_gen_scenario(&out, seed)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Exit status for an error returned by [`run`].
pub fn error_code(e: &anyhow::Error) -> ExitCode {
    if e.downcast_ref::<UsageError>().is_some() {
        ExitCode::from(EXIT_USAGE)
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}
