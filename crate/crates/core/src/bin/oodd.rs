use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oodd::pipeline::{ExperimentConfig, Overrides, Pipeline, Scale, Stage};
use oodd::Error;

#[derive(Parser)]
#[command(name = "oodd", version, about = "Out-of-distribution dynamics detection lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset sizes: desk (2000/200/100, T=200) or full (10000/1000/1000, T=500).
    #[arg(long, global = true)]
    scale: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate nominal and anomalous datasets.
    GenData,
    /// Train ensemble members for every model family.
    Train,
    /// Roll out members and write per-step anomaly scores.
    Score,
    /// Run CUSUM on standardized ensemble scores.
    Detect,
    /// Compute AUC, delay and false-alarm rate per sweep cell.
    Eval,
    /// Write CSV reports from the evaluated metrics.
    Report,
    /// Run every stage in order.
    All,
    /// Print the resolved config as JSON.
    ShowConfig,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let scale = cli.scale.as_deref().map(str::parse::<Scale>).transpose()?;
    cfg.apply(&Overrides {
        jobs: cli.jobs,
        seed: cli.seed,
        out: cli.out.clone(),
        scale,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let stage = match cli.command {
        Command::GenData => Stage::GenData,
        Command::Train => Stage::Train,
        Command::Score => Stage::Score,
        Command::Detect => Stage::Detect,
        Command::Eval => Stage::Eval,
        Command::Report => Stage::Report,
        Command::All => Stage::All,
        Command::ShowConfig => {
            println!("{}", cfg.to_json());
            return ExitCode::SUCCESS;
        }
    };
    let result = Pipeline::new(cfg).and_then(|p| p.run(stage));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
