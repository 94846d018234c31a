use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consensus_ioc::experiment::{Experiment, ExperimentConfig, ExperimentError};
use consensus_ioc::ioc::Termination;

#[derive(Parser)]
#[command(version, about = "Learn distance-dependent consensus weights from a demonstration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; the eight-agent case study when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random positions (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the true policy and write the demonstration.
    Demo,
    /// Fit a policy to the demonstration in the output directory.
    Learn,
    /// Compare the learned policy with the truth.
    Eval,
    /// demo, learn and eval in sequence.
    All,
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed)?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let exp = Experiment::new(&cfg, &base)?;

    let check = |t: Termination| match t {
        Termination::LineSearchFail => Err(ExperimentError::Numeric(
            "line search failed; outputs hold the last accepted policy".into(),
        )),
        _ => Ok(()),
    };
    match cli.command {
        Command::Demo => {
            exp.run_demo(&out)?;
        }
        Command::Learn => check(exp.run_learn(&out)?.termination)?,
        Command::Eval => {
            exp.run_eval(&out)?;
        }
        Command::All => {
            exp.run_demo(&out)?;
            let report = exp.run_learn(&out)?;
            exp.run_eval(&out)?;
            check(report.termination)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
