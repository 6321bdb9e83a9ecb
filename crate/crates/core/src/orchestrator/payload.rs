//! Tag-specific payload schemas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::job::WorkerResult;
use super::state::WorkerState;
use super::OrchestratorError;
use crate::coevolution::{CellEnsemble, EpochStats};
use crate::data::ProfileReport;
use crate::grid::CellCoord;
use crate::losses::LossKind;
use crate::nn::{deserialize_params, serialize_params, MlpArch, MlpParams};
use crate::transport::{PayloadReader, PayloadWriter, Rank, TransportError};

fn coord_u32(v: usize) -> u32 {
    u32::try_from(v).expect("coordinate fits in u32")
}

fn decode_params(bytes: &[u8], arch: &MlpArch) -> Result<MlpParams, OrchestratorError> {
    let p = deserialize_params(bytes, arch.hidden_activation, arch.output_activation)?;
    if p.arch.input_dim != arch.input_dim || p.arch.hidden_layers != arch.hidden_layers || p.arch.output_dim != arch.output_dim {
        return Err(OrchestratorError::Protocol(format!(
            "received network {} -> {:?} -> {} does not match the job's {} -> {:?} -> {}",
            p.arch.input_dim, p.arch.hidden_layers, p.arch.output_dim, arch.input_dim, arch.hidden_layers, arch.output_dim
        )));
    }
    Ok(p)
}

/// CENTER_EXCHANGE: source coordinate, then generator and discriminator
/// parameters, each length-prefixed.
pub fn encode_center(coord: CellCoord, gen: &MlpParams, disc: &MlpParams) -> Vec<u8> {
    PayloadWriter::new()
        .u32(coord_u32(coord.row))
        .u32(coord_u32(coord.col))
        .bytes(&serialize_params(gen))
        .bytes(&serialize_params(disc))
        .finish()
}

pub fn decode_center(
    bytes: &[u8],
    gen_arch: &MlpArch,
    disc_arch: &MlpArch,
) -> Result<(CellCoord, MlpParams, MlpParams), OrchestratorError> {
    let mut r = PayloadReader::new(bytes);
    let coord = CellCoord::new(r.u32("row")? as usize, r.u32("col")? as usize);
    let gen = decode_params(r.bytes("generator")?, gen_arch)?;
    let disc = decode_params(r.bytes("discriminator")?, disc_arch)?;
    r.finish()?;
    Ok((coord, gen, disc))
}

/// RUN_TASK: the worker's coordinate plus the full rank assignment so it
/// can address its neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunTask {
    pub coord: CellCoord,
    pub assignments: BTreeMap<Rank, CellCoord>,
}

pub fn encode_run_task(task: &RunTask) -> Vec<u8> {
    let mut w = PayloadWriter::new()
        .u32(coord_u32(task.coord.row))
        .u32(coord_u32(task.coord.col))
        .u32(task.assignments.len() as u32);
    for (&rank, c) in &task.assignments {
        w = w.u32(rank as u32).u32(coord_u32(c.row)).u32(coord_u32(c.col));
    }
    w.finish()
}

pub fn decode_run_task(bytes: &[u8]) -> Result<RunTask, TransportError> {
    let mut r = PayloadReader::new(bytes);
    let coord = CellCoord::new(r.u32("row")? as usize, r.u32("col")? as usize);
    let n = r.u32("assignment count")?;
    let mut assignments = BTreeMap::new();
    for _ in 0..n {
        let rank = r.u32("rank")? as usize;
        let c = CellCoord::new(r.u32("row")? as usize, r.u32("col")? as usize);
        assignments.insert(rank, c);
    }
    r.finish()?;
    Ok(RunTask { coord, assignments })
}

/// STATUS_REPORT: state byte, epoch, and an error text that is empty unless
/// the worker's training thread failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusReport {
    pub state: WorkerState,
    pub epoch: u32,
    pub error: Option<String>,
}

pub fn encode_status(s: &StatusReport) -> Vec<u8> {
    PayloadWriter::new()
        .u8(s.state.code())
        .u32(s.epoch)
        .bytes(s.error.as_deref().unwrap_or("").as_bytes())
        .finish()
}

pub fn decode_status(bytes: &[u8]) -> Result<StatusReport, TransportError> {
    let mut r = PayloadReader::new(bytes);
    let code = r.u8("state")?;
    let state = WorkerState::from_code(code).ok_or_else(|| TransportError::Frame(format!("unknown worker state {code}")))?;
    let epoch = r.u32("epoch")?;
    let err = String::from_utf8_lossy(r.bytes("error")?).into_owned();
    r.finish()?;
    Ok(StatusReport {
        state,
        epoch,
        error: (!err.is_empty()).then_some(err),
    })
}

pub fn encode_peer_failed(rank: Rank) -> Vec<u8> {
    PayloadWriter::new().u32(rank as u32).finish()
}

pub fn decode_peer_failed(bytes: &[u8]) -> Result<Rank, TransportError> {
    let mut r = PayloadReader::new(bytes);
    let rank = r.u32("rank")? as usize;
    r.finish()?;
    Ok(rank)
}

#[derive(Serialize, Deserialize)]
struct ResultMeta {
    rank: Rank,
    coord: CellCoord,
    loss_kind: LossKind,
    epochs: u64,
    center_gen_fitness: Option<f64>,
    center_disc_fitness: Option<f64>,
    ensemble: CellEnsemble,
    profile: ProfileReport,
    stats: Vec<EpochStats>,
    lost_neighbors: Vec<CellCoord>,
}

/// FINAL_RESULT: JSON metadata, then the center generator, the center
/// discriminator and the ensemble generators in the parameter format.
pub fn encode_final_result(r: &WorkerResult) -> Vec<u8> {
    let meta = ResultMeta {
        rank: r.rank,
        coord: r.coord,
        loss_kind: r.loss_kind,
        epochs: r.epochs,
        center_gen_fitness: r.center_gen_fitness,
        center_disc_fitness: r.center_disc_fitness,
        ensemble: r.ensemble.clone(),
        profile: r.profile.clone(),
        stats: r.stats.clone(),
        lost_neighbors: r.lost_neighbors.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("result metadata serializes");
    let nets: Vec<&MlpParams> = [&r.center_gen, &r.center_disc]
        .into_iter()
        .chain(r.ensemble.generators.iter())
        .collect();
    let mut w = PayloadWriter::new().bytes(&json).u32(nets.len() as u32);
    for n in nets {
        w = w.bytes(&serialize_params(n));
    }
    w.finish()
}

pub fn decode_final_result(bytes: &[u8], gen_arch: &MlpArch, disc_arch: &MlpArch) -> Result<WorkerResult, OrchestratorError> {
    let mut r = PayloadReader::new(bytes);
    let meta: ResultMeta = serde_json::from_slice(r.bytes("metadata")?)?;
    let n = r.u32("network count")? as usize;
    if n < 2 || n - 2 != meta.ensemble.members.len() {
        return Err(OrchestratorError::Protocol(format!(
            "final result carries {n} networks for {} ensemble members",
            meta.ensemble.members.len()
        )));
    }
    let center_gen = decode_params(r.bytes("center generator")?, gen_arch)?;
    let center_disc = decode_params(r.bytes("center discriminator")?, disc_arch)?;
    let mut ensemble = meta.ensemble;
    for _ in 2..n {
        ensemble.generators.push(decode_params(r.bytes("ensemble generator")?, gen_arch)?);
    }
    r.finish()?;
    Ok(WorkerResult {
        rank: meta.rank,
        coord: meta.coord,
        loss_kind: meta.loss_kind,
        epochs: meta.epochs,
        center_gen,
        center_disc,
        center_gen_fitness: meta.center_gen_fitness,
        center_disc_fitness: meta.center_disc_fitness,
        ensemble,
        profile: meta.profile,
        stats: meta.stats,
        lost_neighbors: meta.lost_neighbors,
    })
}
