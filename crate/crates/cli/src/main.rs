use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use copula_vi_cli::check::{run_check, Fault};
use copula_vi_cli::config::{Experiment, ExperimentConfig};
use copula_vi_cli::error::CliError;
use copula_vi_cli::output::{ensure_dir, write_json, Provenance};
use copula_vi_cli::reproduce::{provenance_config, run_reproduce};
use copula_vi_cli::run::{run_fit, run_sample};

/// Variational inference with copula-like flows.
#[derive(Debug, Parser)]
#[command(name = "copula-vi", version)]
struct Cli {
    /// Experiment config in TOML with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 keeps runs reproducible byte for byte.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the configured family to the configured target.
    Fit,
    /// Refit every row of a table and compare with the published values.
    Reproduce {
        /// table1 or table2.
        table: Experiment,
    },
    /// Run the invariant suite and print one JSON line per invariant.
    Check {
        /// Inject a known defect; the suite must then fail.
        #[arg(long)]
        inject_fault: Option<Fault>,
    },
    /// Draw from the checkpoint written by `fit`.
    Sample {
        #[arg(short, default_value_t = 10_000)]
        n: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => return Err(CliError::Config("--config is required for this subcommand".into())),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    match &cli.command {
        Command::Fit => {
            let summary = run_fit(&load_config(cli)?)?;
            println!("{}", serde_json::to_string(&summary).map_err(|e| CliError::Config(e.to_string()))?);
            Ok(())
        }
        Command::Sample { n } => run_sample(&load_config(cli)?, *n),
        Command::Reproduce { table } => {
            let seed = cli.seed.unwrap_or(0);
            let report = run_reproduce(*table, seed)?;
            print!("{}", report.render());
            if let Some(dir) = &cli.out {
                ensure_dir(dir)?;
                let cfg = provenance_config(*table, seed)?;
                let prov = Provenance {
                    version: copula_vi::VERSION.to_string(),
                    config_hash: cfg.hash(),
                    family: "all".into(),
                    seed,
                };
                write_json(&dir.join("reproduce.json"), &prov, &report)?;
            }
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Acceptance("reproduction outside tolerance".into()))
            }
        }
        Command::Check { inject_fault } => {
            let entries = run_check(*inject_fault);
            for e in &entries {
                println!("{}", serde_json::to_string(e).map_err(|e| CliError::Config(e.to_string()))?);
            }
            match entries.iter().filter(|e| !e.pass).count() {
                0 => Ok(()),
                n => Err(CliError::Acceptance(format!("{n} invariants failed"))),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copula-vi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
