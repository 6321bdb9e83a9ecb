use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::job::{CellRunner, JobConfig};
use super::payload::{decode_peer_failed, decode_run_task, encode_final_result, encode_status, RunTask, StatusReport};
use super::state::{TraceRecorder, WorkerControl, WorkerState};
use super::OrchestratorError;
use crate::coevolution::{Evaluator, GanEvaluator};
use crate::data::{Dataset, Routine};
use crate::grid::{overlap_neighbors, CellCoord};
use crate::transport::{CommContext, Endpoint, Gatherer, Message, PeerHealth, Rank, Tag, TransportError};

/// Injected faults for failure-handling tests.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    /// Stop dead (no more messages of any kind) after this epoch.
    pub crash_after_epoch: Option<u64>,
    /// On the n-th heartbeat (1-based) the control loop stalls for the
    /// given duration without answering.
    pub pause_on_heartbeat: Option<(u32, Duration)>,
}

#[derive(Clone)]
pub struct WorkerOptions {
    pub evaluator: Arc<dyn Evaluator + Send + Sync>,
    /// Held for the duration of every training epoch. Workers of one process
    /// sharing a lock train strictly one at a time.
    pub turn_lock: Option<Arc<Mutex<()>>>,
    pub trace: Option<TraceRecorder>,
    pub faults: FaultPlan,
    /// Upper bound on a single gather; `None` waits until peers deliver or
    /// are declared failed.
    pub gather_timeout: Option<Duration>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            evaluator: Arc::new(GanEvaluator),
            turn_lock: None,
            trace: None,
            faults: FaultPlan::default(),
            gather_timeout: None,
        }
    }
}

impl std::fmt::Debug for WorkerOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerOptions")
            .field("turn_lock", &self.turn_lock.is_some())
            .field("faults", &self.faults)
            .field("gather_timeout", &self.gather_timeout)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerExit {
    pub rank: Rank,
    pub state: WorkerState,
    pub epochs: u64,
    /// The worker stopped through an injected crash.
    pub crashed: bool,
    pub error: Option<String>,
}

struct Shared {
    control: Mutex<WorkerControl>,
    health: PeerHealth,
    crashed: AtomicBool,
}

fn status_of(c: &WorkerControl) -> StatusReport {
    StatusReport {
        state: c.state(),
        epoch: c.epoch() as u32,
        error: c.error().map(str::to_owned),
    }
}

/// Runs a worker until SHUTDOWN (or until its endpoint closes).
///
/// The calling thread becomes the control loop; training runs on a second
/// thread started by RUN_TASK.
pub fn worker_run(ep: Endpoint, opts: WorkerOptions) -> Result<WorkerExit, OrchestratorError> {
    let rank = ep.rank();
    let shared = Arc::new(Shared {
        control: Mutex::new(WorkerControl::new(rank, opts.trace.clone())),
        health: PeerHealth::default(),
        crashed: AtomicBool::new(false),
    });
    let hello = status_of(&shared.control.lock().expect("control lock"));
    ep.send(0, Message::new(Tag::StatusReport, 0, encode_status(&hello)))
        .map_err(|e| OrchestratorError::Startup(format!("rank {rank} could not reach the master: {e}")))?;

    let mut exec: Option<JoinHandle<()>> = None;
    let mut heartbeats: u32 = 0;
    loop {
        if shared.crashed.load(Ordering::SeqCst) {
            break;
        }
        let msg = match ep.recv_control(Duration::from_millis(25)) {
            Ok(Some(m)) => m,
            Ok(None) => continue,
            Err(TransportError::Closed) => break,
            Err(e) => return Err(e.into()),
        };
        if shared.crashed.load(Ordering::SeqCst) {
            break;
        }
        match msg.tag {
            Tag::Config => {
                if let Err(e) = shared.control.lock().expect("control lock").on_config(&msg.payload) {
                    log::warn!("rank {rank}: {e}");
                }
            }
            Tag::RunTask => {
                let task = match decode_run_task(&msg.payload) {
                    Ok(t) => t,
                    Err(e) => {
                        log::warn!("rank {rank}: bad RUN_TASK: {e}");
                        continue;
                    }
                };
                let accepted = shared.control.lock().expect("control lock").on_run_task(task.coord);
                match accepted {
                    Ok(()) => {
                        let config = shared
                            .control
                            .lock()
                            .expect("control lock")
                            .config()
                            .expect("configured")
                            .to_vec();
                        let (ep, sh, opts) = (ep.clone(), shared.clone(), opts.clone());
                        exec = Some(
                            thread::Builder::new()
                                .name(format!("cell-{rank}"))
                                .spawn(move || execute(ep, sh, opts, config, task))
                                .expect("spawn execution thread"),
                        );
                    }
                    Err(e) => {
                        log::warn!("rank {rank}: RUN_TASK rejected: {e}");
                        let s = status_of(&shared.control.lock().expect("control lock"));
                        let _ = ep.send(msg.sender, Message::new(Tag::StatusReport, s.epoch, encode_status(&s)));
                    }
                }
            }
            Tag::GetStatus => {
                let s = status_of(&shared.control.lock().expect("control lock"));
                let _ = ep.send(msg.sender, Message::new(Tag::StatusReport, s.epoch, encode_status(&s)));
            }
            Tag::Heartbeat => {
                heartbeats += 1;
                if let Some((n, pause)) = opts.faults.pause_on_heartbeat {
                    if heartbeats == n {
                        log::info!("rank {rank}: injected control pause of {pause:?}");
                        thread::sleep(pause);
                        continue;
                    }
                }
                let _ = ep.send(msg.sender, Message::new(Tag::HeartbeatAck, msg.epoch, Vec::new()));
            }
            Tag::PeerFailed => match decode_peer_failed(&msg.payload) {
                Ok(r) => shared.health.mark_failed(r),
                Err(e) => log::warn!("rank {rank}: bad PEER_FAILED: {e}"),
            },
            Tag::Shutdown => break,
            other => log::warn!("rank {rank}: unexpected {other:?} on the control plane"),
        }
    }
    let crashed = shared.crashed.load(Ordering::SeqCst);
    // Unblocks an execution thread still waiting on peers.
    ep.close();
    if !crashed {
        if let Some(h) = exec.take() {
            let _ = h.join();
        }
    }
    let c = shared.control.lock().expect("control lock");
    Ok(WorkerExit {
        rank,
        state: c.state(),
        epochs: c.epoch(),
        crashed,
        error: c.error().map(str::to_owned),
    })
}

fn execute(ep: Endpoint, shared: Arc<Shared>, opts: WorkerOptions, config: Vec<u8>, task: RunTask) {
    let rank = ep.rank();
    if let Err(e) = train_cell(&ep, &shared, &opts, &config, &task) {
        if shared.crashed.load(Ordering::SeqCst) || ep.is_closed() {
            log::debug!("rank {rank}: execution stopped: {e}");
            return;
        }
        log::error!("rank {rank}: training failed: {e}");
        let s = {
            let mut c = shared.control.lock().expect("control lock");
            c.fail(e.to_string());
            status_of(&c)
        };
        let _ = ep.send(0, Message::new(Tag::StatusReport, s.epoch, encode_status(&s)));
    }
}

fn train_cell(
    ep: &Endpoint,
    shared: &Shared,
    opts: &WorkerOptions,
    config: &[u8],
    task: &RunTask,
) -> Result<(), OrchestratorError> {
    let rank = ep.rank();
    let job = JobConfig::from_bytes(config)?;
    let by_coord: BTreeMap<CellCoord, Rank> = task.assignments.iter().map(|(&r, &c)| (c, r)).collect();
    if by_coord.get(&task.coord) != Some(&rank) {
        return Err(OrchestratorError::Protocol(format!(
            "rank {rank} was given {} but the assignment table disagrees",
            task.coord
        )));
    }
    let peers = overlap_neighbors(&job.grid, task.coord)?;
    let mut ranks = Vec::with_capacity(peers.len());
    let mut coord_of = BTreeMap::new();
    for c in peers {
        let r = *by_coord
            .get(&c)
            .ok_or_else(|| OrchestratorError::Protocol(format!("no rank hosts neighbor {c}")))?;
        ranks.push(r);
        coord_of.insert(r, c);
    }
    let mut ctx = CommContext::local(ranks)?;
    let dataset = Dataset::load(&job.dataset)?;
    let mut runner = CellRunner::new(&job, task.coord, dataset, opts.evaluator.clone())?;
    let mut gatherer = Gatherer::new();

    for _ in 0..job.train.iterations {
        {
            let _turn = opts.turn_lock.as_ref().map(|l| l.lock().expect("turn lock"));
            runner.train_epoch()?;
        }
        let epoch = runner.epoch();
        shared.control.lock().expect("control lock").set_epoch(epoch);
        if opts.faults.crash_after_epoch == Some(epoch) {
            log::info!("rank {rank}: injected crash after epoch {epoch}");
            shared.crashed.store(true, Ordering::SeqCst);
            ep.close();
            return Ok(());
        }

        let t = Instant::now();
        let failed = shared.health.failed();
        for r in ctx.members.iter().filter(|r| failed.contains(r)) {
            runner.lose_neighbor(coord_of[r]);
        }
        ctx = ctx.without(&failed);
        let contribution = runner.contribution();
        let received = match gatherer.gather(ep, &ctx, &contribution, epoch as u32, &shared.health, opts.gather_timeout) {
            Ok(all) => all,
            Err(TransportError::GatherAborted(f)) => {
                log::warn!("rank {rank}: epoch {epoch} gather missing failed ranks {:?}", f.missing);
                for r in &f.missing {
                    runner.lose_neighbor(coord_of[r]);
                }
                ctx = ctx.without(&f.missing.iter().copied().collect());
                f.partial
            }
            Err(e) => return Err(e.into()),
        };
        for (r, bytes) in &received {
            if *r != rank {
                let from = runner.absorb_bytes(bytes)?;
                if from != coord_of[r] {
                    return Err(OrchestratorError::Protocol(format!(
                        "rank {r} sent centers for {from}, expected {}",
                        coord_of[r]
                    )));
                }
            }
        }
        runner.record(Routine::Gather, t.elapsed().as_secs_f64());
    }

    shared.control.lock().expect("control lock").finish()?;
    let result = runner.finish(rank);
    ep.send(0, Message::new(Tag::FinalResult, result.epochs as u32, encode_final_result(&result)))?;
    Ok(())
}
