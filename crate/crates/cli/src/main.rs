//! `rescon`: keys, simulations, stability analysis, synthesis and the
//! networked demo for encrypted resetting controllers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rescon_core::analysis::{DEFAULT_EPS_BAR, DEFAULT_MU_GRID_POINTS};
use rescon_core::synthesis::FactorSplit;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "rescon", version, about = "Encrypted resetting dynamic controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Balanced,
    Left,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Paillier key pair.
    Keygen {
        #[arg(long, default_value_t = rescon_core::crypto_paillier::DEFAULT_KEY_BITS)]
        bits: u64,
        /// Deterministic key from a seed; system randomness otherwise.
        #[arg(long)]
        seed: Option<u64>,
        /// Write integers as 0x-prefixed hex instead of decimal.
        #[arg(long)]
        hex: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a public-only key file.
        #[arg(long)]
        public_out: Option<PathBuf>,
    },
    /// Run the closed loop and write the trace as CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Certificate search, reset horizons, word-length bound and lifted spectral radius.
    Analyze {
        #[arg(long, default_value = "reactor")]
        plant: String,
        #[arg(long, default_value = "reactor-t25")]
        controller: String,
        #[arg(long, default_value_t = DEFAULT_MU_GRID_POINTS)]
        mu_points: usize,
        #[arg(long, default_value_t = DEFAULT_EPS_BAR)]
        eps_bar: f64,
        /// Period at which to report the lifted spectral radius.
        #[arg(long = "period", short = 'T')]
        period: Option<u64>,
        /// Evaluate the reset horizon at this δ (needs --mu).
        #[arg(long, requires = "mu")]
        delta: Option<f64>,
        #[arg(long, requires = "delta", allow_hyphen_values = true)]
        mu: Option<f64>,
        /// Write the certificate found.
        #[arg(long)]
        cert_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a stability certificate against a plant and controller.
    VerifyCertificate {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value = "reactor")]
        plant: String,
        #[arg(long, default_value = "reactor-t25")]
        controller: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Search for synthesis variables over a grid of decay rates.
    Synthesize {
        #[arg(long, default_value = "reactor")]
        plant: String,
        /// Solver settings as JSON.
        #[arg(long)]
        solver: Option<PathBuf>,
        #[arg(long)]
        mu_points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the reconstructed controller.
        #[arg(long)]
        controller_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover a controller and its certificate matrix from synthesis variables.
    Reconstruct {
        #[arg(long)]
        nu: PathBuf,
        #[arg(long, default_value = "reactor")]
        plant: String,
        #[arg(long, value_enum, default_value = "balanced")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integer controller with and without resets, side by side.
    DemoOverflow {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
        #[arg(long)]
        out_resetting: Option<PathBuf>,
        #[arg(long)]
        out_non_resetting: Option<PathBuf>,
    },
    /// Networked sensor/actuator and cloud roles.
    Netdemo {
        #[command(subcommand)]
        role: Role,
    },
}

#[derive(Subcommand)]
enum Role {
    /// Serve one session as the cloud controller.
    Cloud {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Per-step timeout in seconds.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
    /// Run the plant with its sensor and actuator against a remote cloud.
    Plant {
        #[arg(long, default_value = "127.0.0.1:7878")]
        connect: String,
        #[arg(long, default_value_t = 1)]
        session_id: u64,
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Both roles in this process over a loopback socket.
    Loopback {
        #[arg(long, default_value_t = 1)]
        session_id: u64,
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        /// Compare against the in-process encrypted loop.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen { bits, seed, hex, out, public_out } => {
            commands::keygen(bits, seed, hex, out.as_deref(), public_out.as_deref())
        }
        Command::Simulate { config, run } => commands::simulate(&RunConfig::merged(config.as_deref(), &run)?),
        Command::Analyze { plant, controller, mu_points, eps_bar, period, delta, mu, cert_out, out } => {
            commands::analyze(&commands::AnalyzeArgs {
                plant,
                controller,
                mu_points,
                eps_bar,
                period,
                delta,
                mu,
                cert_out,
                out,
            })
        }
        Command::VerifyCertificate { cert, plant, controller, tol } => {
            commands::verify_certificate(&cert, &plant, &controller, tol)
        }
        Command::Synthesize { plant, solver, mu_points, seed, controller_out, out } => {
            commands::synthesize(&commands::SynthesizeArgs { plant, solver, mu_points, seed, controller_out, out })
        }
        Command::Reconstruct { nu, plant, split, out } => {
            let split = match split {
                Split::Balanced => FactorSplit::Balanced,
                Split::Left => FactorSplit::Left,
            };
            commands::reconstruct(&nu, &plant, split, out.as_deref())
        }
        Command::DemoOverflow { config, run, out_resetting, out_non_resetting } => commands::demo_overflow(
            &RunConfig::merged(config.as_deref(), &run)?,
            out_resetting.as_deref(),
            out_non_resetting.as_deref(),
        ),
        Command::Netdemo { role } => match role {
            Role::Cloud { listen, timeout } => commands::netdemo_cloud(&listen, Duration::from_secs(timeout)),
            Role::Plant { connect, session_id, timeout, config, run } => commands::netdemo_plant(
                &RunConfig::merged(config.as_deref(), &run)?,
                &connect,
                session_id,
                Duration::from_secs(timeout),
            ),
            Role::Loopback { session_id, timeout, check, config, run } => commands::netdemo_loopback(
                &RunConfig::merged(config.as_deref(), &run)?,
                session_id,
                Duration::from_secs(timeout),
                check,
            ),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
