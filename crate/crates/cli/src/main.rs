use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use droid_core::harness::{
    exit_code, load_config, read_summary, run_pipeline, run_variants, seed_override_from_env, Stage,
};
use droid_core::Result;

#[derive(Parser)]
#[command(
    name = "droid",
    version,
    about = "Door-opening identification and transfer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override every stage seed. Takes precedence over DROID_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated stages to run instead of the command's own stage.
    #[arg(long)]
    stages: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the demonstration.
    Demo(Common),
    /// Play the demonstration on the true dynamics.
    Real(Common),
    /// Fit the parameter distribution.
    Identify(Common),
    /// Train the three policies.
    Train(Common),
    /// Evaluate the trained policies.
    Eval(Common),
    /// Run every stage in order.
    Run(Common),
    /// Spring-variant and two-pose identification experiments.
    Variants(Common),
    /// Print the evaluation summary of a finished run.
    Report(Common),
}

fn execute(command: Command) -> Result<()> {
    let (args, default_stages): (Common, Vec<Stage>) = match command {
        Command::Demo(a) => (a, vec![Stage::Demo]),
        Command::Real(a) => (a, vec![Stage::Real]),
        Command::Identify(a) => (a, vec![Stage::Identify]),
        Command::Train(a) => (a, vec![Stage::Train]),
        Command::Eval(a) => (a, vec![Stage::Eval]),
        Command::Run(a) => (a, Stage::ALL.to_vec()),
        Command::Variants(a) => {
            let cfg = configured(&a)?;
            let report = run_variants(&cfg, &a.out)?;
            print!("{}\n{}", report.table_csv, report.compare_csv);
            return Ok(());
        }
        Command::Report(a) => {
            configured(&a)?;
            print!("{}", read_summary(&a.out)?);
            return Ok(());
        }
    };
    let cfg = configured(&args)?;
    let stages = match &args.stages {
        Some(s) => Stage::parse_list(s)?,
        None => default_stages,
    };
    let manifest = run_pipeline(&cfg, &stages, &args.out)?;
    for stage in &stages {
        if let Some(record) = manifest.stages.get(stage) {
            for (path, hash) in &record.artifacts {
                println!("{}  {path}", &hash[..16]);
            }
        }
    }
    Ok(())
}

fn configured(args: &Common) -> Result<droid_core::harness::ExperimentConfig> {
    let cfg = load_config(&args.config)?;
    Ok(match args.seed.or(seed_override_from_env()?) {
        Some(seed) => cfg.with_seed_override(seed),
        None => cfg,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
