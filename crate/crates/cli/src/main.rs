use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cellgan::config::{parse_config, DatasetChoice, Overrides, Role, RunConfig, TransportKind};
use cellgan::losses::LossMode;
use cellgan::orchestrator::{FailurePolicy, FinalReport};
use cellgan::run::{run_parallel, run_sequential, write_outputs, RunError, RunOutcome};

/// Distributed cellular coevolutionary GAN trainer.
#[derive(Debug, Parser)]
#[command(name = "cellgan", version)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Grid size as RxC, e.g. 3x3.
    #[arg(long, value_name = "RxC")]
    grid: Option<String>,
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// ring, grid25 or mnist.
    #[arg(long)]
    dataset: Option<DatasetChoice>,
    #[arg(long, value_name = "PATH")]
    mnist_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    mnist_labels: Option<PathBuf>,
    /// uniform-bce or mustangs-roundrobin.
    #[arg(long, value_name = "MODE")]
    loss_mode: Option<LossMode>,
    /// inproc or tcp.
    #[arg(long)]
    transport: Option<TransportKind>,
    /// master, worker or auto.
    #[arg(long)]
    role: Option<Role>,
    /// Rank of this process when running as a worker.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_name = "N")]
    base_port: Option<u16>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Serialize training turns so parallel runs match the sequential baseline.
    #[arg(long)]
    deterministic: bool,
    /// continue or abort.
    #[arg(long)]
    failure_policy: Option<FailurePolicy>,
    /// Run the single-core baseline instead of the distributed trainer.
    #[arg(long)]
    sequential: bool,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            grid: self.grid.clone(),
            iterations: self.iterations,
            batch_size: self.batch_size,
            dataset: self.dataset,
            mnist_images: self.mnist_images.clone(),
            mnist_labels: self.mnist_labels.clone(),
            loss_mode: self.loss_mode,
            transport: self.transport,
            role: self.role,
            rank: self.rank,
            base_port: self.base_port,
            seed: self.seed,
            output_dir: self.output.clone(),
            deterministic: self.deterministic,
            failure_policy: self.failure_policy,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let file = match &cli.config {
        Some(p) => Some(std::fs::read(p).map_err(|e| {
            cellgan::config::ConfigError::Key {
                key: "config".into(),
                reason: format!("{}: {e}", p.display()),
            }
        })?),
        None => None,
    };
    Ok(parse_config(file.as_deref(), &cli.overrides())?)
}

fn summarize(report: &FinalReport) {
    println!(
        "best cell {} (rank {}) on {} {}: {}",
        report.best.coord,
        report.best_rank,
        report.dataset,
        report.grid,
        serde_json::to_string(&report.best_score).unwrap_or_default()
    );
    let failed = report.failed_cells();
    if !failed.is_empty() {
        println!("failed cells: {failed:?}");
    }
    println!("wall time {:.3}s", report.profile.overall);
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let cfg = load_config(cli)?;
    log::debug!("effective config: {}", cfg.to_json());
    let report = if cli.sequential {
        run_sequential(&cfg)?
    } else {
        match run_parallel(&cfg)? {
            RunOutcome::Master(r) => *r,
            RunOutcome::Worker(exit) => {
                log::info!("worker {} exited in state {:?} after {} epochs", exit.rank, exit.state, exit.epochs);
                return match exit.error {
                    Some(e) => Err(RunError::Orchestrator(cellgan::orchestrator::OrchestratorError::Protocol(e))),
                    None => Ok(()),
                };
            }
        }
    };
    let files = write_outputs(&cfg.output_dir, &cfg, &report)?;
    summarize(&report);
    println!("metrics written to {}", files.metrics.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
