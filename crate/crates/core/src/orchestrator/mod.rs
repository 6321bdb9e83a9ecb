//! Master and worker lifecycles.
//!
//! The master discovers workers, places one grid cell on each, broadcasts the
//! job configuration, starts the cells, watches them with heartbeats and
//! finally reduces their results to the best ensemble. A worker answers
//! control messages on one thread while a second thread trains its cell and
//! exchanges centers with the neighboring workers after every epoch.

mod heartbeat;
mod job;
mod master;
mod payload;
mod placement;
mod report;
mod state;
mod worker;

use thiserror::Error;

use crate::coevolution::CoevoError;
use crate::data::DataError;
use crate::grid::GridError;
use crate::nn::NnError;
use crate::transport::{Rank, TransportError};

pub use heartbeat::{HeartbeatConfig, HeartbeatMonitor, LivenessEvent};
pub use job::{CellRunner, JobConfig, WorkerResult};
pub use master::{master_run, FailurePolicy, MasterOptions};
pub use payload::{
    decode_center, decode_final_result, decode_peer_failed, decode_run_task, decode_status, encode_center,
    encode_final_result, encode_peer_failed, encode_run_task, encode_status, RunTask, StatusReport,
};
pub use placement::{compute_placement, local_inventory, NodeInfo, Placement};
pub use report::{reduce_results, CellReport, CellStatus, FinalReport};
pub use state::{is_legal_transition, TraceRecorder, WorkerControl, WorkerState};
pub use worker::{worker_run, FaultPlan, WorkerExit, WorkerOptions};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Coevo(#[from] CoevoError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid job configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("startup error: {0}")]
    Startup(String),
    #[error("invalid job configuration: {0}")]
    Config(String),
    #[error("insufficient capacity: {needed} slots needed, {available} available")]
    Capacity { needed: usize, available: usize },
    #[error("workers failed: ranks {0:?}")]
    WorkerFailed(Vec<Rank>),
}

impl OrchestratorError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestratorError::WorkerFailed(_) => 3,
            OrchestratorError::Startup(_)
            | OrchestratorError::Config(_)
            | OrchestratorError::Json(_)
            | OrchestratorError::Capacity { .. }
            | OrchestratorError::Grid(_)
            | OrchestratorError::Data(_) => 2,
            OrchestratorError::Transport(TransportError::Startup(_) | TransportError::Usage(_)) => 2,
            OrchestratorError::Coevo(CoevoError::Config(_)) => 2,
            _ => 1,
        }
    }
}
