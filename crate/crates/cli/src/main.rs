use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stochcoil::stochastic::RiskMode;
use stochcoil_cli::{gradcheck, init, iota, oos, optimize, with_workers, worker_count, CliError};

#[derive(Parser)]
#[command(
    name = "stochcoil",
    version,
    about = "Stochastic stellarator coil optimization"
)]
struct Cli {
    /// Worker threads (default: STOCHCOIL_WORKERS, else one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-start optimization of the configured risk measure.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Run directory, overriding the configured one.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Out-of-sample objective distribution of an optimized design.
    Oos {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Result JSON (default: result.json in the run directory).
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Rotational transform on axis over perturbed coil sets.
    Iota {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Finite-difference check of every objective gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Check at this result instead of a perturbed starting design.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Write the built-in two-coil instance and a configuration.
    Init {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::RiskNeutral)]
        mode: Mode,
        /// Use the published sample counts instead of the desk-scale defaults.
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Deterministic,
    RiskNeutral,
    Cvar,
}

impl From<Mode> for RiskMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Deterministic => RiskMode::Deterministic,
            Mode::RiskNeutral => RiskMode::RiskNeutral,
            Mode::Cvar => RiskMode::Cvar,
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Optimize { config, output } => {
            let docs = optimize::run(&config, output.as_deref())?;
            for d in &docs {
                println!(
                    "start {:2}  value {:.9e}  iterations {:5}  {:?}",
                    d.start, d.value, d.iterations, d.termination
                );
            }
        }
        Command::Oos {
            config,
            output,
            result,
        } => {
            let s = oos::run(&config, output.as_deref(), result.as_deref())?;
            println!(
                "n {}  mean {:.9e}  std {:.3e}  cvar({}) {:.9e}  nominal {:.9e}",
                s.n_samples, s.mean, s.std, s.alpha, s.cvar, s.nominal_value
            );
        }
        Command::Iota {
            config,
            output,
            result,
        } => {
            let (_, s) = iota::run(&config, output.as_deref(), result.as_deref())?;
            println!("unperturbed iota {:.9}", s.unperturbed.iota);
            for p in &s.sigmas {
                println!(
                    "sigma {:.3e}  mean {:.9}  std {:.3e}  failed {}/{}",
                    p.sigma, p.mean, p.std, p.n_failed, p.n_draws
                );
            }
        }
        Command::Gradcheck {
            config,
            output,
            result,
        } => {
            let r = gradcheck::run(&config, output.as_deref(), result.as_deref())?;
            for c in &r.components {
                println!(
                    "{:18} {:.3e}  {}",
                    c.name,
                    c.max_rel_error,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
            if !r.pass {
                return Err(CliError::failure(format!(
                    "gradient check failed (tolerance {:.1e})",
                    r.tolerance
                )));
            }
        }
        Command::Init {
            output,
            mode,
            full_scale,
        } => init::run(&output, mode.into(), full_scale)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = worker_count(cli.workers)
        .and_then(|w| with_workers(w, || dispatch(cli.command)))
        .and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
