use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toxprop::config::BackendKind;
use toxprop::experiment::{
    cmd_ablate, cmd_export_dpo, cmd_metrics, cmd_run, cmd_seeds_filter, metrics_options,
    parse_tau_grid, Overrides, EXIT_OK,
};
use toxprop::Error;

#[derive(Parser)]
#[command(
    name = "toxprop",
    version,
    about = "Paired toxicity-propagation rollouts and metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured condition and write one rollout log per condition.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
    },
    /// Compute the report from rollout logs.
    Metrics {
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated thresholds for the SPG sweep.
        #[arg(long, value_parser = parse_tau_grid)]
        tau_grid: Option<std::vec::Vec<f64>>,
        /// Supplies report_tau, tau_grid and the bootstrap seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the base condition under each ablation preset.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long, value_parser = parse_tau_grid)]
        tau_grid: Option<std::vec::Vec<f64>>,
    },
    /// Extract counterfactual preference pairs from rollout logs.
    ExportDpo {
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        min_delta: f64,
    },
    /// Score the configured seed file and keep posts below the seed threshold.
    SeedsFilter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            parallelism,
            backend,
        } => {
            let o = Overrides {
                out,
                parallelism,
                backend,
                tau_grid: None,
            };
            let s = cmd_run(&config, &o)?;
            println!(
                "{} pairs, {} failures, {} log file(s)",
                s.pairs,
                s.failures,
                s.log_files.len()
            );
            Ok(s.exit_code())
        }
        Command::Metrics {
            logs,
            out,
            tau_grid,
            config,
        } => {
            let opts = metrics_options(config.as_deref(), tau_grid.as_deref())?;
            let r = cmd_metrics(&logs, &opts, &out)?;
            print!("{}", r.to_markdown());
            Ok(EXIT_OK)
        }
        Command::Ablate {
            config,
            out,
            parallelism,
            backend,
            tau_grid,
        } => {
            let o = Overrides {
                out,
                parallelism,
                backend,
                tau_grid,
            };
            let (s, r) = cmd_ablate(&config, &o)?;
            print!("{}", r.to_markdown());
            Ok(s.exit_code())
        }
        Command::ExportDpo {
            logs,
            out,
            min_delta,
        } => {
            let n = cmd_export_dpo(&logs, min_delta, &out)?;
            println!("{n} pairs written to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::SeedsFilter { config, out, tau } => {
            let (total, kept) = cmd_seeds_filter(&config, &out, tau)?;
            println!("kept {kept} of {total} seeds");
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Error::Config(errs)) => {
            for e in &errs {
                eprintln!("config error: {e}");
            }
            ExitCode::from(Error::Config(errs).exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
