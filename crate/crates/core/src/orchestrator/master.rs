use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::heartbeat::{HeartbeatConfig, HeartbeatMonitor, LivenessEvent};
use super::job::{JobConfig, WorkerResult};
use super::payload::{decode_final_result, decode_status, encode_peer_failed, encode_run_task, RunTask};
use super::placement::{compute_placement, local_inventory, NodeInfo};
use super::report::{reduce_results, FinalReport};
use super::state::WorkerState;
use super::OrchestratorError;
use crate::grid::CellCoord;
use crate::transport::{broadcast_config, CommContext, Endpoint, Message, Rank, Tag};

/// Reaction to a worker declared failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Drop the failed cell and let its neighbors carry on.
    #[default]
    Continue,
    /// Shut every worker down and report the failure.
    Abort,
}

impl FromStr for FailurePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continue" => Ok(FailurePolicy::Continue),
            "abort" => Ok(FailurePolicy::Abort),
            other => Err(format!("unknown failure policy {other:?} (expected continue or abort)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterOptions {
    pub heartbeat: HeartbeatConfig,
    pub failure_policy: FailurePolicy,
    /// How long to wait for every worker's initial STATUS_REPORT.
    pub handshake_timeout: Duration,
    /// Defaults to a single node holding the whole world.
    pub nodes: Option<Vec<NodeInfo>>,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            heartbeat: HeartbeatConfig::default(),
            failure_policy: FailurePolicy::Continue,
            handshake_timeout: Duration::from_secs(30),
            nodes: None,
        }
    }
}

fn handshake(ep: &Endpoint, timeout: Duration) -> Result<(), OrchestratorError> {
    let mut waiting: BTreeSet<Rank> = (1..ep.world_size()).collect();
    let deadline = Instant::now() + timeout;
    while !waiting.is_empty() {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(OrchestratorError::Startup(format!(
                "no handshake from ranks {waiting:?} within {timeout:?}"
            )));
        }
        let Some(m) = ep.recv_control(left)? else { continue };
        match (m.tag, decode_status(&m.payload)) {
            (Tag::StatusReport, Ok(s)) if s.state == WorkerState::Inactive => {
                waiting.remove(&m.sender);
            }
            _ => log::debug!("ignoring {:?} from rank {} during handshake", m.tag, m.sender),
        }
    }
    Ok(())
}

fn shutdown_all(ep: &Endpoint) {
    for r in 1..ep.world_size() {
        let _ = ep.send(r, Message::empty(Tag::Shutdown));
    }
}

/// Runs the master side of a job over `ep` (which must be rank 0) and
/// returns the reduced report.
pub fn master_run(ep: &Endpoint, job: &JobConfig, opts: &MasterOptions) -> Result<FinalReport, OrchestratorError> {
    job.validate()?;
    opts.heartbeat.validate().map_err(OrchestratorError::Config)?;
    let world = ep.world_size();
    let cells = job.grid.cell_count();
    if world < cells + 1 {
        return Err(OrchestratorError::Startup(format!(
            "grid {} needs {} workers, world has {}",
            job.grid,
            cells,
            world.saturating_sub(1)
        )));
    }
    handshake(ep, opts.handshake_timeout)?;
    let nodes = opts.nodes.clone().unwrap_or_else(|| local_inventory(world));
    let placement = compute_placement(&job.grid, &nodes)?;
    log::info!("placement: {:?}", placement.assignments);

    let started = Instant::now();
    broadcast_config(ep, &CommContext::world(world), &job.to_bytes())?;
    for (&rank, &coord) in &placement.assignments {
        let task = RunTask {
            coord,
            assignments: placement.assignments.clone(),
        };
        ep.send(rank, Message::new(Tag::RunTask, 0, encode_run_task(&task)))
            .map_err(|e| OrchestratorError::Startup(format!("RUN_TASK to rank {rank}: {e}")))?;
    }

    let (ev_tx, ev_rx) = crossbeam_channel::unbounded();
    let monitor = HeartbeatMonitor::start(ep.clone(), placement.assignments.keys().copied().collect(), opts.heartbeat, ev_tx);
    let mut pending: BTreeSet<Rank> = placement.assignments.keys().copied().collect();
    let mut failed: BTreeMap<Rank, CellCoord> = BTreeMap::new();
    let mut results: Vec<WorkerResult> = Vec::new();

    let mut on_failure = |rank: Rank, why: &str, pending: &mut BTreeSet<Rank>| -> Result<(), OrchestratorError> {
        if !pending.remove(&rank) {
            return Ok(());
        }
        log::error!("worker {rank} failed: {why}");
        failed.insert(rank, placement.assignments[&rank]);
        match opts.failure_policy {
            FailurePolicy::Abort => {
                shutdown_all(ep);
                Err(OrchestratorError::WorkerFailed(vec![rank]))
            }
            FailurePolicy::Continue => {
                for &r in placement.assignments.keys().filter(|&&r| r != rank) {
                    let _ = ep.send(r, Message::new(Tag::PeerFailed, 0, encode_peer_failed(rank)));
                }
                Ok(())
            }
        }
    };

    while !pending.is_empty() {
        crossbeam_channel::select! {
            recv(ep.control_queue()) -> m => {
                let m = m.map_err(|_| OrchestratorError::Protocol("master endpoint closed".into()))?;
                match m.tag {
                    Tag::HeartbeatAck => monitor.ack(m.sender),
                    Tag::StatusReport => match decode_status(&m.payload) {
                        Ok(s) if s.error.is_some() => {
                            on_failure(m.sender, s.error.as_deref().unwrap_or(""), &mut pending)?;
                        }
                        Ok(s) => log::debug!("rank {} is {:?} at epoch {}", m.sender, s.state, s.epoch),
                        Err(e) => log::warn!("bad STATUS_REPORT from rank {}: {e}", m.sender),
                    },
                    other => log::warn!("master ignoring {other:?} from rank {}", m.sender),
                }
            }
            recv(ep.data_queue()) -> m => {
                let m = m.map_err(|_| OrchestratorError::Protocol("master endpoint closed".into()))?;
                if m.tag != Tag::FinalResult {
                    log::warn!("master ignoring {:?} from rank {}", m.tag, m.sender);
                    continue;
                }
                if !pending.contains(&m.sender) {
                    log::warn!("unexpected FINAL_RESULT from rank {}", m.sender);
                    continue;
                }
                let r = decode_final_result(&m.payload, &job.generator, &job.discriminator)?;
                if r.rank != m.sender || placement.assignments.get(&r.rank) != Some(&r.coord) {
                    return Err(OrchestratorError::Protocol(format!(
                        "rank {} returned a result for rank {} at {}", m.sender, r.rank, r.coord
                    )));
                }
                pending.remove(&m.sender);
                monitor.retire(m.sender);
                log::info!("rank {} finished {} after {} epochs", m.sender, r.coord, r.epochs);
                results.push(r);
            }
            recv(ev_rx) -> ev => {
                if let Ok(LivenessEvent::Failed { rank, silent_for }) = ev {
                    on_failure(rank, &format!("silent for {silent_for:?}"), &mut pending)?;
                }
            }
        }
    }
    let wall = started.elapsed().as_secs_f64();
    monitor.stop();
    shutdown_all(ep);

    // The slowest worker bounds the run; its breakdown is reported against
    // the master's wall time.
    let mut profile = results
        .iter()
        .max_by(|a, b| a.profile.overall.total_cmp(&b.profile.overall))
        .map(|r| r.profile.clone())
        .unwrap_or_default();
    profile.overall = wall.max(profile.overall);
    profile.other = (profile.overall - profile.routine_sum()).max(0.0);
    reduce_results(job, results, &failed, profile)
}

