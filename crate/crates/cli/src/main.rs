use std::path::PathBuf;
use std::process::ExitCode;

use amp_cli::config::SplitName;
use amp_cli::{run, CliError, Overrides, RunConfig, VERSION_STAMP};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "amp", version = VERSION_STAMP, about = "Adaptive message passing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Accept embedding sizes outside the standard grid.
    #[arg(long, global = true)]
    allow_offgrid: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset and write it with its manifest.
    Generate,
    /// Train and write history, checkpoint and test metrics.
    Train,
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Energy, sensitivity and filter statistics per layer.
    Diagnose {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every cell of the configured grid and select one.
    Gridsearch,
    /// Randomized checks of the quantile bounds and both theorems.
    VerifyTheorems,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required for this subcommand".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        allow_offgrid: cli.allow_offgrid,
    };
    Ok(RunConfig::load(path, &overrides)?)
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    match &cli.command {
        Command::Generate => {
            let m = run::generate(&load(cli)?, &cli.out)?;
            println!("wrote {:?} graphs to {}", m.counts, cli.out.join("dataset").display());
        }
        Command::Train => {
            for r in run::train(&load(cli)?, &cli.out)? {
                println!(
                    "run {} seed {}: {} epochs, best val MSE {:.6} at epoch {}, test log10 MSE {}, L̂ {}",
                    r.run,
                    r.seed,
                    r.epochs,
                    r.best_val_mse,
                    r.best_epoch,
                    r.test_log10_mse.map_or("n/a".into(), |v| format!("{v:.4}")),
                    r.l_hat
                );
            }
        }
        Command::Evaluate { checkpoint, split } => {
            let split = match split {
                SplitArg::Train => SplitName::Train,
                SplitArg::Val => SplitName::Val,
                SplitArg::Test => SplitName::Test,
            };
            let m = run::evaluate(&load(cli)?, checkpoint.as_deref(), split, &cli.out)?;
            println!("MSE {:.6}, log10 MSE {}", m.mse, m.log10_mse);
        }
        Command::Diagnose { checkpoint } => {
            let r = run::diagnose(&load(cli)?, checkpoint.as_deref(), &cli.out)?;
            println!("diagnosed {} layers into {}", r.layers.len(), cli.out.display());
        }
        Command::Gridsearch => {
            let g = run::gridsearch(&load(cli)?, &cli.out)?;
            match g.selected {
                Some(s) => println!(
                    "{} cells, selected cell {s}; test log10 MSE mean {:.4} std {:.4}",
                    g.cells.len(),
                    g.final_mean.unwrap_or(f64::NAN),
                    g.final_std.unwrap_or(f64::NAN)
                ),
                None => println!("{} cells, none finished", g.cells.len()),
            }
        }
        Command::VerifyTheorems => {
            let seed = match (cli.seed, &cli.config) {
                (Some(s), _) => s,
                (None, Some(_)) => load(cli)?.seed,
                (None, None) => return Err(CliError::Usage("pass --seed or --config".into())),
            };
            let report = run::verify_theorems(seed)?;
            run::write_verify(&cli.out, &report)?;
            for line in report.lines() {
                println!("{line}");
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
