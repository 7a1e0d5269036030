use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use pvbid::config::{self, DataSource};
use pvbid::pipeline::Pipeline;

/// Day-ahead PV forecasting, conformal uncertainty and market bidding.
#[derive(Parser)]
#[command(name = "pvbid", version, about)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, default_value = "pvbid.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and price series.
    Synth,
    /// Ingest and preprocess CSV data.
    Ingest,
    /// Fit the point prediction model.
    Train,
    /// Calibrate the uncertainty methods.
    Calibrate,
    /// Score intervals (coverage, WIS).
    Evaluate,
    /// Build scenarios and bid schedules.
    Bid,
    /// Settle schedules against realized prices.
    Backtest,
    /// All stages in order.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut cfg = config::validate_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let pipeline = Pipeline::new(cfg);

    let emit = |value: serde_json::Value, human: String| {
        if cli.json {
            println!("{value}");
        } else {
            println!("{human}");
        }
    };

    match cli.command {
        Command::Synth => {
            if pipeline.cfg.data.source != DataSource::Synth {
                bail!("`synth` needs data.source = \"synth\" (config says csv)");
            }
            let n = pipeline.stage_data()?;
            emit(
                serde_json::json!({"stage": "data", "records": n}),
                format!("data: {n} records written"),
            );
        }
        Command::Ingest => {
            if pipeline.cfg.data.source != DataSource::Csv {
                bail!("`ingest` needs data.source = \"csv\" (config says synth)");
            }
            let n = pipeline.stage_data()?;
            emit(
                serde_json::json!({"stage": "data", "records": n}),
                format!("data: {n} records written"),
            );
        }
        Command::Train => {
            let meta = pipeline.stage_train()?;
            emit(
                serde_json::to_value(&meta)?,
                format!(
                    "train: {} on {} features, adjusted R² {:.3}",
                    meta.kind,
                    meta.features.len(),
                    meta.adjusted_r2_test
                ),
            );
        }
        Command::Calibrate => {
            let names = pipeline.stage_calibrate()?;
            emit(
                serde_json::json!({"stage": "calibrate", "methods": names}),
                format!("calibrate: {}", names.join(", ")),
            );
        }
        Command::Evaluate => {
            let rows = pipeline.stage_evaluate()?;
            let human = rows
                .iter()
                .map(|r| format!("{} {} wis {:.4}", r.method, r.version, r.wis))
                .collect::<Vec<_>>()
                .join("\n");
            emit(serde_json::to_value(&rows)?, human);
        }
        Command::Bid => {
            let files = pipeline.stage_bid()?;
            emit(
                serde_json::json!({"stage": "bid", "schedules": files}),
                format!("bid: {} schedules written", files.len()),
            );
        }
        Command::Backtest => {
            let rows = pipeline.stage_backtest()?;
            let human = rows
                .iter()
                .map(|r| {
                    format!(
                        "{:<24} {:<8} profit {:>12.2}  imbalance {:>7.2}%",
                        r.strategy, r.cp_method, r.profit, r.imbalance_pct
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            emit(serde_json::to_value(&rows)?, human);
        }
        Command::Run => {
            let summary = pipeline.run()?;
            let human = format!(
                "run complete: stages [{}], {} methods, reports in {}",
                summary.stages.join(", "),
                summary.methods.len(),
                summary.out_dir.display()
            );
            emit(serde_json::to_value(&summary)?, human);
        }
    }
    Ok(())
}
