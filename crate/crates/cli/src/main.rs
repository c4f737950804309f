use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use obshte_cli::{run, ErrorRecord, Overrides, PipelineConfig, Step};

#[derive(Debug, Parser)]
#[command(
    name = "obshte",
    version,
    about = "Observational effect estimation checked against experiments"
)]
struct Cli {
    /// Subcommand to run.
    #[arg(value_enum)]
    step: Step,

    /// TOML configuration file.
    #[arg(long, env = "OBSHTE_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, env = "OBSHTE_SEED")]
    seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, env = "OBSHTE_THREADS")]
    threads: Option<usize>,

    /// Share of units labeled positive.
    #[arg(long, env = "OBSHTE_QUANTILE")]
    quantile: Option<f64>,

    /// Number of score strata.
    #[arg(long, env = "OBSHTE_STRATA")]
    strata: Option<usize>,

    /// Minimum observations per unit.
    #[arg(long = "min-obs", env = "OBSHTE_MIN_OBS")]
    min_obs: Option<usize>,

    /// Number of units to target.
    #[arg(long, env = "OBSHTE_BUDGET")]
    budget: Option<usize>,

    /// Output directory.
    #[arg(long, env = "OBSHTE_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: cli.seed,
            threads: cli.threads,
            quantile: cli.quantile,
            strata: cli.strata,
            min_obs: cli.min_obs,
            budget: cli.budget,
            out: cli.out.clone(),
        });
        run(cli.step, &cfg)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord::new(cli.step.name(), &e);
            match serde_json::to_string(&serde_json::json!({ "error": record })) {
                Ok(line) => eprintln!("{line}"),
                Err(_) => eprintln!("{e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
