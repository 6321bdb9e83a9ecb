use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::grid::CellCoord;
use crate::transport::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerState {
    Inactive,
    Processing,
    Finished,
}

impl WorkerState {
    pub fn code(self) -> u8 {
        match self {
            WorkerState::Inactive => 0,
            WorkerState::Processing => 1,
            WorkerState::Finished => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(WorkerState::Inactive),
            1 => Some(WorkerState::Processing),
            2 => Some(WorkerState::Finished),
            _ => None,
        }
    }
}

/// Only INACTIVE -> PROCESSING and PROCESSING -> FINISHED are allowed.
pub fn is_legal_transition(from: WorkerState, to: WorkerState) -> bool {
    matches!(
        (from, to),
        (WorkerState::Inactive, WorkerState::Processing) | (WorkerState::Processing, WorkerState::Finished)
    )
}

/// Records every state a worker enters, for trace assertions in tests.
#[derive(Debug, Clone, Default)]
pub struct TraceRecorder {
    events: Arc<Mutex<Vec<(Rank, WorkerState)>>>,
}

impl TraceRecorder {
    pub fn record(&self, rank: Rank, state: WorkerState) {
        self.events.lock().expect("trace lock").push((rank, state));
    }

    pub fn events(&self) -> Vec<(Rank, WorkerState)> {
        self.events.lock().expect("trace lock").clone()
    }

    /// States entered by `rank`, in order.
    pub fn trace_of(&self, rank: Rank) -> Vec<WorkerState> {
        self.events().into_iter().filter(|e| e.0 == rank).map(|e| e.1).collect()
    }

    /// Every recorded per-rank trace starts INACTIVE and only takes legal
    /// transitions.
    pub fn all_legal(&self) -> bool {
        let events = self.events();
        let mut ranks: Vec<Rank> = events.iter().map(|e| e.0).collect();
        ranks.sort_unstable();
        ranks.dedup();
        ranks.into_iter().all(|r| {
            let t = self.trace_of(r);
            t.first() == Some(&WorkerState::Inactive) && t.windows(2).all(|w| is_legal_transition(w[0], w[1]))
        })
    }
}

/// The worker's control-side state machine.
#[derive(Debug)]
pub struct WorkerControl {
    rank: Rank,
    state: WorkerState,
    epoch: u64,
    config: Option<Vec<u8>>,
    coord: Option<CellCoord>,
    error: Option<String>,
    trace: Option<TraceRecorder>,
}

impl WorkerControl {
    pub fn new(rank: Rank, trace: Option<TraceRecorder>) -> Self {
        if let Some(t) = &trace {
            t.record(rank, WorkerState::Inactive);
        }
        Self {
            rank,
            state: WorkerState::Inactive,
            epoch: 0,
            config: None,
            coord: None,
            error: None,
            trace,
        }
    }

    pub fn state(&self) -> WorkerState {
        self.state
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn coord(&self) -> Option<CellCoord> {
        self.coord
    }

    pub fn config(&self) -> Option<&[u8]> {
        self.config.as_deref()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    fn enter(&mut self, to: WorkerState) -> Result<(), OrchestratorError> {
        if !is_legal_transition(self.state, to) {
            return Err(OrchestratorError::Protocol(format!(
                "rank {}: illegal transition {:?} -> {:?}",
                self.rank, self.state, to
            )));
        }
        self.state = to;
        if let Some(t) = &self.trace {
            t.record(self.rank, to);
        }
        Ok(())
    }

    pub fn on_config(&mut self, bytes: &[u8]) -> Result<(), OrchestratorError> {
        if bytes.is_empty() {
            return Err(OrchestratorError::Protocol("empty configuration".into()));
        }
        if self.state != WorkerState::Inactive {
            return Err(OrchestratorError::Protocol(format!(
                "rank {}: configuration received while {:?}",
                self.rank, self.state
            )));
        }
        self.config = Some(bytes.to_vec());
        Ok(())
    }

    /// Accepts a task only when configured and INACTIVE.
    pub fn on_run_task(&mut self, coord: CellCoord) -> Result<(), OrchestratorError> {
        if self.state == WorkerState::Inactive && self.config.is_none() {
            return Err(OrchestratorError::Protocol(format!(
                "rank {}: RUN_TASK before configuration",
                self.rank
            )));
        }
        self.enter(WorkerState::Processing)?;
        self.coord = Some(coord);
        Ok(())
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    pub fn finish(&mut self) -> Result<(), OrchestratorError> {
        self.enter(WorkerState::Finished)
    }

    pub fn fail(&mut self, reason: String) {
        self.error = Some(reason);
    }
}
