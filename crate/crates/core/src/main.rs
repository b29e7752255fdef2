use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;

use wishart_lab::cli::{run, Subcommand};
use wishart_lab::config::ExperimentConfig;
use wishart_lab::LabError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Theory,
    Sample,
    CltCheck,
    Esd,
    Rates,
    Rosenblatt,
    Functional,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Theory => Subcommand::Theory,
            Command::Sample => Subcommand::Sample,
            Command::CltCheck => Subcommand::CltCheck,
            Command::Esd => Subcommand::Esd,
            Command::Rates => Subcommand::Rates,
            Command::Rosenblatt => Subcommand::Rosenblatt,
            Command::Functional => Subcommand::Functional,
        }
    }
}

/// Exact and Monte Carlo experiments on renormalized Wishart matrices of
/// self-similar Gaussian increments.
#[derive(Debug, Parser)]
#[command(name = "wishart-lab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (JSON or TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.out_dir`, defaults to `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Config(_) | LabError::Domain(_) | LabError::Contract(_) | LabError::UnsupportedRegime(_) => 2,
        LabError::Numeric { .. } | LabError::Fit(_) | LabError::Divergence(_) | LabError::Singularity(_) => 3,
        LabError::Io(_) => 1,
    }
}

fn kind(e: &LabError) -> &'static str {
    match e {
        LabError::Config(_) => "config",
        LabError::Domain(_) => "domain",
        LabError::Contract(_) => "contract",
        LabError::UnsupportedRegime(_) => "unsupported_regime",
        LabError::Numeric { .. } => "numeric",
        LabError::Fit(_) => "fit",
        LabError::Divergence(_) => "divergence",
        LabError::Singularity(_) => "singularity",
        LabError::Io(_) => "io",
    }
}

fn execute(args: &Args) -> Result<(), LabError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if args.threads.is_some() {
        config.run.threads = args.threads;
    }
    if let Some(k) = config.run.threads {
        if k == 0 {
            return Err(LabError::Config(vec!["threads must be >= 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| LabError::Config(vec![format!("thread pool: {e}")]))?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.run.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    for path in run(args.command.into(), &config, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let details = match &e {
                LabError::Config(list) => json!(list),
                LabError::Numeric { min_eigenvalue, .. } => json!({ "min_eigenvalue": min_eigenvalue }),
                _ => serde_json::Value::Null,
            };
            let report = json!({ "error": { "kind": kind(&e), "message": e.to_string(), "details": details, "exit_code": code } });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
