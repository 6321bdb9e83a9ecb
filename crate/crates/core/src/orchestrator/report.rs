use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::job::{JobConfig, WorkerResult};
use super::OrchestratorError;
use crate::coevolution::{mode_coverage_metric, select_best_ensemble, CellEnsemble, EnsembleScore, EpochStats};
use crate::data::ProfileReport;
use crate::grid::{CellCoord, GridSpec};
use crate::losses::LossKind;
use crate::nn::{serialize_params, MlpParams};
use crate::transport::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub rank: Rank,
    pub coord: CellCoord,
    pub status: CellStatus,
    pub loss_kind: Option<LossKind>,
    pub epochs: u64,
    pub score: Option<EnsembleScore>,
    pub center_gen_fitness: Option<f64>,
    pub center_disc_fitness: Option<f64>,
    pub lost_neighbors: Vec<CellCoord>,
    pub profile: Option<ProfileReport>,
    pub stats: Vec<EpochStats>,
    #[serde(skip)]
    pub center_gen: Option<MlpParams>,
    #[serde(skip)]
    pub center_disc: Option<MlpParams>,
}

/// Outcome of a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub grid: GridSpec,
    pub dataset: String,
    pub iterations: usize,
    pub best_rank: Rank,
    pub best: CellEnsemble,
    pub best_score: EnsembleScore,
    /// One entry per grid cell, in rank order.
    pub cells: Vec<CellReport>,
    /// Routine breakdown of the run; `overall` is its wall time.
    pub profile: ProfileReport,
}

impl FinalReport {
    /// Encoded center generator and discriminator of every completed cell.
    pub fn center_bytes(&self) -> BTreeMap<CellCoord, (Vec<u8>, Vec<u8>)> {
        self.cells
            .iter()
            .filter_map(|c| match (&c.center_gen, &c.center_disc) {
                (Some(g), Some(d)) => Some((c.coord, (serialize_params(g), serialize_params(d)))),
                _ => None,
            })
            .collect()
    }

    pub fn failed_cells(&self) -> Vec<CellCoord> {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Failed)
            .map(|c| c.coord)
            .collect()
    }
}

/// Scores every completed cell's ensemble and selects the best one. Failed
/// cells are listed but take no part in the selection.
pub fn reduce_results(
    job: &JobConfig,
    mut results: Vec<WorkerResult>,
    failed: &BTreeMap<Rank, CellCoord>,
    profile: ProfileReport,
) -> Result<FinalReport, OrchestratorError> {
    results.sort_by_key(|r| r.rank);
    if results.is_empty() {
        return Err(OrchestratorError::WorkerFailed(failed.keys().copied().collect()));
    }
    let ensembles: Vec<CellEnsemble> = results.iter().map(|r| r.ensemble.clone()).collect();
    let selection = if job.dataset.centers().is_some() {
        select_best_ensemble(
            &ensembles,
            mode_coverage_metric(job.dataset.clone(), job.eval_samples, job.train.seed),
        )?
    } else {
        select_best_ensemble(&ensembles, |e| {
            Ok(EnsembleScore::Loss {
                value: e.generator_fitness.unwrap_or(f64::MAX),
            })
        })?
    };
    let best_rank = results
        .iter()
        .find(|r| r.coord == selection.best.coord)
        .map(|r| r.rank)
        .expect("selected ensemble comes from a result");

    let mut cells: Vec<CellReport> = results
        .into_iter()
        .zip(&selection.scores)
        .map(|(r, (_, score))| CellReport {
            rank: r.rank,
            coord: r.coord,
            status: CellStatus::Completed,
            loss_kind: Some(r.loss_kind),
            epochs: r.epochs,
            score: Some(*score),
            center_gen_fitness: r.center_gen_fitness,
            center_disc_fitness: r.center_disc_fitness,
            lost_neighbors: r.lost_neighbors,
            profile: Some(r.profile),
            stats: r.stats,
            center_gen: Some(r.center_gen),
            center_disc: Some(r.center_disc),
        })
        .collect();
    for (&rank, &coord) in failed {
        cells.push(CellReport {
            rank,
            coord,
            status: CellStatus::Failed,
            loss_kind: None,
            epochs: 0,
            score: None,
            center_gen_fitness: None,
            center_disc_fitness: None,
            lost_neighbors: Vec::new(),
            profile: None,
            stats: Vec::new(),
            center_gen: None,
            center_disc: None,
        });
    }
    cells.sort_by_key(|c| c.rank);
    Ok(FinalReport {
        grid: job.grid,
        dataset: job.dataset.name().to_string(),
        iterations: job.train.iterations,
        best_rank,
        best: selection.best,
        best_score: selection.score,
        cells,
        profile,
    })
}
