use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cladnet::continual::StrategyKind;
use cladnet::data::DatasetKind;
use cladnet_cli::{cmd_ablate, cmd_prepare, cmd_report, cmd_train, Axis, ExperimentConfig, Overrides};

/// Continual human activity recognition experiments.
#[derive(Parser)]
#[command(name = "cladnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Window, split and standardize a dataset into a reusable cache.
    Prepare {
        #[arg(long)]
        dataset: Option<DatasetKind>,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one strategy over the subject stream for every configured seed.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Prepared cache file or directory.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one ablation grid and write a comparison table.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate finished runs into summary tables and forgetting curves.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: Option<PathBuf>, overrides: Overrides) -> cladnet::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> cladnet::Result<()> {
    match cli.command {
        Command::Prepare {
            dataset,
            root,
            out,
            config,
        } => {
            let cfg = load(
                config,
                Overrides {
                    dataset,
                    root,
                    ..Overrides::default()
                },
            )?;
            let (checksum, stats) = cmd_prepare(&cfg, &out)?;
            for s in &stats.subjects {
                println!(
                    "subject {}: {} train ({} labeled), {} test",
                    s.subject, s.train_windows, s.labeled_train_windows, s.test_windows
                );
            }
            println!(
                "rows kept {}, dropped {} (activity) + {} (missing values)",
                stats.parse.rows_kept, stats.parse.dropped_activity, stats.parse.dropped_nan
            );
            println!("cache checksum {checksum}");
        }
        Command::Train {
            config,
            strategy,
            seed,
            epochs,
            cache,
            out,
        } => {
            let cfg = load(
                config,
                Overrides {
                    strategy,
                    seed,
                    epochs,
                    cache,
                    out,
                    ..Overrides::default()
                },
            )?;
            for r in cmd_train(&cfg)? {
                let m = &r.matrix;
                println!(
                    "{} seed {}: FA {:.4} FM {:.4} LA {:.4}",
                    cfg.strategy.kind,
                    r.seed,
                    m.final_accuracy(),
                    m.forgetting_measure(),
                    m.learning_accuracy()
                );
            }
            println!("results in {}", cfg.run.out_dir.display());
        }
        Command::Ablate {
            config,
            axis,
            seed,
            epochs,
            cache,
            out,
        } => {
            let cfg = load(
                config,
                Overrides {
                    seed,
                    epochs,
                    cache,
                    out,
                    ..Overrides::default()
                },
            )?;
            for r in cmd_ablate(&cfg, axis, &cfg.run.out_dir)? {
                println!(
                    "{axis} {}: FA {:.4}±{:.4} FM {:.4}±{:.4} LA {:.4}±{:.4}",
                    r.name, r.fa.0, r.fa.1, r.fm.0, r.fm.1, r.la.0, r.la.1
                );
            }
        }
        Command::Report { runs, out } => {
            let report = cmd_report(&runs, &out)?;
            for r in &report.strategies {
                println!(
                    "{} ({} runs): FA {:.4}±{:.4} FM {:.4}±{:.4} LA {:.4}±{:.4}",
                    r.strategy, r.runs, r.fa.0, r.fa.1, r.fm.0, r.fm.1, r.la.0, r.la.1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
