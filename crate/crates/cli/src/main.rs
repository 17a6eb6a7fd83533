use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use config::ExperimentConfig;
use error::CliError;
use output::OutputDir;

#[derive(Parser)]
#[command(name = "geqlab", version, about = "Gaussian-equivalence experiments: moments, ODEs, SGD, replica and ERM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate input moments and write the covariance spectrum.
    Moments(Common),
    /// Integrate the order-parameter ODEs.
    Ode(Common),
    /// Simulate online SGD.
    Sgd(Common),
    /// Run the ODE and SGD from one initial condition and compare them.
    Compare(Common),
    /// Solve the replica equations over the alpha grid.
    Replica(Common),
    /// Train random-features estimators by empirical risk minimization.
    Erm(Common),
    /// Replica sweep against ERM at the same sizes.
    ReplicaCompare(Common),
    /// Equivalence matrices, bound terms, spectra and field cumulants.
    GetAudit(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for dense linear algebra.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Moments(c) => ("moments", c),
            Command::Ode(c) => ("ode", c),
            Command::Sgd(c) => ("sgd", c),
            Command::Compare(c) => ("compare", c),
            Command::Replica(c) => ("replica", c),
            Command::Erm(c) => ("erm", c),
            Command::ReplicaCompare(c) => ("replica-compare", c),
            Command::GetAudit(c) => ("get-audit", c),
        }
    }
}

fn execute(cmd: &Command) -> Result<(), CliError> {
    let (name, common) = cmd.parts();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds.master = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    match common.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(1) => faer::set_global_parallelism(faer::Par::Seq),
        Some(n) => faer::set_global_parallelism(faer::Par::rayon(n)),
        None => {}
    }
    let mut out = OutputDir::create(&cfg.output.dir)?;
    let late = match cmd {
        Command::Moments(_) => commands::moments(&cfg, &mut out).map(|_| None),
        Command::Ode(_) => commands::ode(&cfg, &mut out).map(|_| None),
        Command::Sgd(_) => commands::sgd(&cfg, &mut out).map(|_| None),
        Command::Compare(_) => commands::compare(&cfg, &mut out).map(|_| None),
        Command::Replica(_) => commands::replica(&cfg, &mut out),
        Command::Erm(_) => commands::erm(&cfg, &mut out).map(|_| None),
        Command::ReplicaCompare(_) => commands::replica_compare(&cfg, &mut out),
        Command::GetAudit(_) => commands::get_audit(&cfg, &mut out).map(|_| None),
    }?;
    // outputs of a partially failed sweep are still written, then the failure is reported
    out.finish(name, &cfg)?;
    match late {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
