//! Whole-run drivers: the single-core baseline, the multi-threaded and
//! multi-process runs, and the files written at the end of a run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::coevolution::{sample_mixture, Evaluator, GanEvaluator};
use crate::config::{ConfigError, Role, RunConfig, TransportKind};
use crate::data::{Dataset, ProfileReport, Routine};
use crate::grid::{coord_to_rank, overlap_neighbors, CellCoord};
use crate::orchestrator::{
    master_run, reduce_results, worker_run, CellRunner, FinalReport, JobConfig, MasterOptions, OrchestratorError,
    WorkerExit, WorkerOptions,
};
use crate::par;
use crate::transport::{tcp_endpoint, Endpoint, InProcNetwork, TcpOptions, TransportError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("writing outputs: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 for configuration and startup problems, 3 for worker failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Orchestrator(e) => e.exit_code(),
            RunError::Io(_) => 1,
        }
    }
}

impl From<TransportError> for RunError {
    fn from(e: TransportError) -> Self {
        RunError::Orchestrator(e.into())
    }
}

/// What a process role produced.
#[derive(Debug)]
pub enum RunOutcome {
    Master(Box<FinalReport>),
    Worker(WorkerExit),
}

/// Single-core baseline: every cell of the grid is trained in turn on the
/// calling thread, and the center exchange happens in memory after each
/// epoch.
pub fn run_sequential(cfg: &RunConfig) -> Result<FinalReport, RunError> {
    cfg.validate()?;
    Ok(run_sequential_job(&cfg.job(), Arc::new(GanEvaluator))?)
}

/// [`run_sequential`] on an already validated job with a custom evaluator.
pub fn run_sequential_job(
    job: &JobConfig,
    evaluator: Arc<dyn Evaluator + Send + Sync>,
) -> Result<FinalReport, OrchestratorError> {
    job.validate()?;
    par::single_threaded(|| sequential_inner(job, evaluator))
}

fn sequential_inner(job: &JobConfig, evaluator: Arc<dyn Evaluator + Send + Sync>) -> Result<FinalReport, OrchestratorError> {
    let started = Instant::now();
    let dataset = Dataset::load(&job.dataset)?;
    let coords: Vec<CellCoord> = job.grid.cells().collect();
    let mut runners = coords
        .iter()
        .map(|&c| CellRunner::new(job, c, dataset.clone(), evaluator.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let peers = coords
        .iter()
        .map(|&c| overlap_neighbors(&job.grid, c))
        .collect::<Result<Vec<_>, _>>()?;
    let index: BTreeMap<CellCoord, usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    for _ in 0..job.train.iterations {
        for r in runners.iter_mut() {
            r.train_epoch()?;
        }
        let t = Instant::now();
        let contributions: Vec<Vec<u8>> = runners.iter().map(|r| r.contribution()).collect();
        for (i, r) in runners.iter_mut().enumerate() {
            for c in &peers[i] {
                if *c != coords[i] {
                    r.absorb_bytes(&contributions[index[c]])?;
                }
            }
        }
        // One exchange serves every cell; split its cost evenly.
        let share = t.elapsed().as_secs_f64() / runners.len() as f64;
        for r in runners.iter_mut() {
            r.record(Routine::Gather, share);
        }
    }

    let results = runners
        .into_iter()
        .map(|r| {
            let rank = coord_to_rank(&job.grid, r.coord())?;
            Ok(r.finish(rank))
        })
        .collect::<Result<Vec<_>, OrchestratorError>>()?;
    let mut profile = ProfileReport::merge_sum(results.iter().map(|r| &r.profile));
    profile.overall = started.elapsed().as_secs_f64();
    profile.other = (profile.overall - profile.routine_sum()).max(0.0);
    reduce_results(job, results, &BTreeMap::new(), profile)
}

/// Runs the configured role. `Role::Auto` starts the master and every
/// worker inside this process, over channels or loopback TCP.
pub fn run_parallel(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let job = cfg.job();
    let master = cfg.master_options();
    let workers = worker_options(cfg.deterministic);
    match (cfg.role, cfg.transport) {
        (Role::Auto, TransportKind::Inproc) => {
            Ok(RunOutcome::Master(Box::new(run_inproc(&job, &master, |_| workers.clone())?)))
        }
        (Role::Auto, TransportKind::Tcp) => Ok(RunOutcome::Master(Box::new(run_tcp_local(
            &job,
            &master,
            cfg.tcp_options()?,
            |_| workers.clone(),
        )?))),
        (Role::Master, _) => {
            let ep = tcp_endpoint(0, cfg.world_size(), cfg.tcp_options()?)?;
            let report = master_run(&ep, &job, &master);
            ep.close();
            Ok(RunOutcome::Master(Box::new(report?)))
        }
        (Role::Worker, _) => {
            let rank = cfg.rank.expect("validated");
            let ep = tcp_endpoint(rank, cfg.world_size(), cfg.tcp_options()?)?;
            let exit = worker_run(ep.clone(), workers);
            ep.close();
            Ok(RunOutcome::Worker(exit?))
        }
    }
}

fn worker_options(deterministic: bool) -> WorkerOptions {
    WorkerOptions {
        turn_lock: deterministic.then(|| Arc::new(Mutex::new(()))),
        ..WorkerOptions::default()
    }
}

/// Master and workers as threads of this process, connected by channels.
/// `options(rank)` configures each worker.
pub fn run_inproc(
    job: &JobConfig,
    master: &MasterOptions,
    options: impl Fn(usize) -> WorkerOptions,
) -> Result<FinalReport, OrchestratorError> {
    let eps = InProcNetwork::create(job.grid.cell_count() + 1);
    run_threads(eps, job, master, options)
}

/// Like [`run_inproc`] with every rank on its own loopback TCP port.
pub fn run_tcp_local(
    job: &JobConfig,
    master: &MasterOptions,
    tcp: TcpOptions,
    options: impl Fn(usize) -> WorkerOptions,
) -> Result<FinalReport, OrchestratorError> {
    let world = job.grid.cell_count() + 1;
    let mut eps = Vec::with_capacity(world);
    for rank in 0..world {
        match tcp_endpoint(rank, world, tcp.clone()) {
            Ok(ep) => eps.push(ep),
            Err(e) => {
                for ep in &eps {
                    ep.close();
                }
                return Err(OrchestratorError::Startup(format!("rank {rank}: {e}")));
            }
        }
    }
    run_threads(eps, job, master, options)
}

fn run_threads(
    eps: Vec<Endpoint>,
    job: &JobConfig,
    master: &MasterOptions,
    options: impl Fn(usize) -> WorkerOptions,
) -> Result<FinalReport, OrchestratorError> {
    let master_ep = eps[0].clone();
    let handles: Vec<_> = eps[1..]
        .iter()
        .map(|ep| {
            let (ep, opts) = (ep.clone(), options(ep.rank()));
            thread::Builder::new()
                .name(format!("worker-{}", ep.rank()))
                .spawn(move || worker_run(ep, opts))
                .expect("spawn worker thread")
        })
        .collect();
    let report = master_run(&master_ep, job, master);
    if report.is_err() {
        for ep in &eps[1..] {
            ep.close();
        }
    }
    for h in handles {
        match h.join() {
            Ok(Ok(exit)) => log::debug!("worker {} exited in state {:?}", exit.rank, exit.state),
            Ok(Err(e)) => log::warn!("worker exited with error: {e}"),
            Err(_) => log::error!("worker thread panicked"),
        }
    }
    for ep in &eps {
        ep.close();
    }
    report
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub metrics: PathBuf,
    pub profile: PathBuf,
    pub samples: Option<PathBuf>,
}

#[derive(Serialize)]
struct Metrics<'a> {
    config: &'a RunConfig,
    report: &'a FinalReport,
}

#[derive(Serialize)]
struct ProfileFile<'a> {
    run: &'a ProfileReport,
    routines: Vec<&'static str>,
    workers: BTreeMap<String, &'a ProfileReport>,
}

/// Writes `metrics.json`, `profile.json` and, for planar datasets,
/// `samples.csv` with points drawn from the best ensemble.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, report: &FinalReport) -> Result<OutputFiles, RunError> {
    fs::create_dir_all(dir)?;
    let metrics = dir.join("metrics.json");
    let json = serde_json::to_vec_pretty(&Metrics { config: cfg, report }).map_err(OrchestratorError::from)?;
    fs::write(&metrics, json)?;

    let profile = dir.join("profile.json");
    let file = ProfileFile {
        run: &report.profile,
        routines: Routine::TRACKED.iter().map(|r| r.name()).collect(),
        workers: report
            .cells
            .iter()
            .filter_map(|c| c.profile.as_ref().map(|p| (c.coord.to_string(), p)))
            .collect(),
    };
    fs::write(&profile, serde_json::to_vec_pretty(&file).map_err(OrchestratorError::from)?)?;

    let samples = if cfg.dataset.centers().is_some() && !report.best.generators.is_empty() {
        let path = dir.join("samples.csv");
        let batch = sample_mixture(&report.best, cfg.eval_samples, cfg.seed)
            .map_err(|e| RunError::Orchestrator(e.into()))?;
        let mut out = io::BufWriter::new(fs::File::create(&path)?);
        writeln!(out, "x,y")?;
        for i in 0..batch.rows() {
            let row = batch.row(i);
            writeln!(out, "{},{}", row[0], row[1])?;
        }
        out.flush()?;
        Some(path)
    } else {
        None
    };
    Ok(OutputFiles {
        metrics,
        profile,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Overrides};

    fn small(grid: &str, iterations: usize) -> RunConfig {
        let o = Overrides {
            grid: Some(grid.into()),
            iterations: Some(iterations),
            batch_size: Some(16),
            seed: Some(3),
            ..Overrides::default()
        };
        let mut cfg = parse_config(None, &o).unwrap();
        cfg.batches_per_epoch = 2;
        cfg.eval_samples = 200;
        cfg.heartbeat_interval_ms = 200;
        cfg
    }

    #[test]
    fn sequential_is_repeatable() {
        let cfg = small("2x2", 2);
        let a = run_sequential(&cfg).unwrap();
        let b = run_sequential(&cfg).unwrap();
        assert_eq!(a.center_bytes(), b.center_bytes());
        assert_eq!(a.best_rank, b.best_rank);
        assert_eq!(a.cells.len(), 4);
        assert!(a.profile.routine_sum() <= a.profile.overall + 1e-9);
    }

    #[test]
    fn inproc_matches_sequential_in_deterministic_mode() {
        let mut cfg = small("2x2", 3);
        cfg.deterministic = true;
        let seq = run_sequential(&cfg).unwrap();
        let RunOutcome::Master(par) = run_parallel(&cfg).unwrap() else { panic!("master outcome") };
        assert_eq!(seq.center_bytes(), par.center_bytes());
        assert_eq!(seq.best_rank, par.best_rank);
    }

    #[test]
    fn outputs_are_written() {
        let cfg = small("1x1", 1);
        let report = run_sequential(&cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("cellgan-out-{}", std::process::id()));
        let files = write_outputs(&dir, &cfg, &report).unwrap();
        let metrics: serde_json::Value = serde_json::from_slice(&fs::read(&files.metrics).unwrap()).unwrap();
        assert_eq!(metrics["report"]["grid"], "1x1");
        let csv = fs::read_to_string(files.samples.unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 201);
        let _ = fs::remove_dir_all(dir);
    }
}
