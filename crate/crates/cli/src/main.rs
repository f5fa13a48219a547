use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itkrm_cli::{init_workers, parse_spec_for, run_eval, run_experiment, CliError, EvalArgs, Family, SpecInput};

/// Dictionary learning experiments with ITKrM.
///
/// The worker thread count is read from ITKRM_WORKERS.
#[derive(Parser)]
#[command(name = "itkrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learning experiments: plain_recovery, replacement_compare,
    /// adaptive_synthetic, adaptive_image.
    Learn(RunArgs),
    /// Diagnostics: fixedpoint_probe, contraction_sweep.
    Probe(RunArgs),
    /// Evaluate a saved dictionary.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file or a manifest.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved spec and exit.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    spec: SpecInput,
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    let (family, args) = match cli.command {
        Command::Learn(a) => (Family::Learn, a),
        Command::Probe(a) => (Family::Probe, a),
        Command::Eval(a) => {
            let report = run_eval(&a)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            return Ok(());
        }
    };
    let spec = parse_spec_for(family, &args.spec, args.config.as_deref())?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&spec).map_err(anyhow::Error::from)?);
        return Ok(());
    }
    let dir = run_experiment(&spec)?;
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
