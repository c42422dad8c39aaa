use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};
use log::info;

use ire_core::trajectory::RunStatus;
use ire_expcli::config::ExperimentConfig;
use ire_expcli::experiments::{self, RunError};
use ire_expcli::verify::{self, REPORT_HEADER, SUITES};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

/// Seed of the Monte-Carlo suites unless `--seed` is given.
const VERIFY_SEED: u64 = 1;

#[derive(Parser)]
#[command(
    name = "ire-lab",
    version,
    about = "Implicit regularization enhancement experiments"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "IRE_LAB_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps and Monte-Carlo estimates.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its trajectory CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every cell of the configuration's sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run verification suites and print one line per check.
    Verify {
        #[arg(required = true, value_parser = PossibleValuesParser::new(SUITES.iter().copied().chain(["all"])))]
        suites: Vec<String>,
        #[arg(long, default_value_t = VERIFY_SEED)]
        seed: u64,
    },
    /// Write the Toy2D trajectory files.
    Toy {
        /// Boost factors of the IRE runs (repeatable).
        #[arg(long = "kappa", default_values_t = verify::TOY_KAPPAS)]
        kappas: Vec<f64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<u8, RunError> {
    match cli.command {
        Command::Run { config, seed } => {
            let cfg = load(&config, seed)?;
            let (path, status) = experiments::run(&cfg, &cli.out)?;
            println!(
                "{}\t{}",
                path.display(),
                ire_expcli::output::status_name(status)
            );
            Ok(match status {
                RunStatus::Diverged { .. } => EXIT_DIVERGED,
                _ => 0,
            })
        }
        Command::Sweep { config, seed } => {
            let cfg = load(&config, seed)?;
            let (path, records) = experiments::sweep(&cfg, &cli.out)?;
            info!("{} cells", records.len());
            println!("{}", path.display());
            Ok(0)
        }
        Command::Verify { suites, seed } => {
            let names: Vec<&str> = if suites.iter().any(|s| s == "all") {
                SUITES.to_vec()
            } else {
                suites.iter().map(String::as_str).collect()
            };
            println!("{REPORT_HEADER}");
            let mut failed = false;
            for name in names {
                for check in verify::run_suite(name, seed)? {
                    failed |= !check.passed;
                    println!("{check}");
                }
            }
            Ok(if failed { EXIT_FAILURE } else { 0 })
        }
        Command::Toy { kappas } => {
            for p in experiments::toy(&cli.out, &kappas)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
