use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::payload::{decode_center, encode_center};
use super::OrchestratorError;
use crate::coevolution::{stream_seed, train_epoch, Cell, CellEnsemble, EpochStats, Evaluator, TrainConfig, STREAM_DATA};
use crate::data::{DataStream, Dataset, DatasetSpec, ProfileReport, Routine};
use crate::grid::{CellCoord, GridSpec};
use crate::losses::{LossKind, LossMode};
use crate::nn::{Activation, MlpArch, MlpParams};
use crate::transport::Rank;

/// Everything a worker needs to run its cell; sent as JSON in the CONFIG
/// message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub generator: MlpArch,
    pub discriminator: MlpArch,
    pub loss_mode: LossMode,
    /// Serialize training across the workers of one process.
    pub deterministic: bool,
    /// Samples drawn from each ensemble when scoring it.
    pub eval_samples: usize,
}

impl JobConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        self.train.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        let dim = self.dataset.sample_dim();
        if self.generator.output_dim != dim {
            return Err(OrchestratorError::Config(format!(
                "generator emits {} values but {} samples have {dim}",
                self.generator.output_dim,
                self.dataset.name()
            )));
        }
        if self.discriminator.input_dim != dim || self.discriminator.output_dim != 1 {
            return Err(OrchestratorError::Config(format!(
                "discriminator must map {dim} values to 1 (got {} -> {})",
                self.discriminator.input_dim, self.discriminator.output_dim
            )));
        }
        if self.discriminator.output_activation != Activation::Sigmoid {
            return Err(OrchestratorError::Config("discriminator output must be sigmoid".into()));
        }
        if self.eval_samples == 0 {
            return Err(OrchestratorError::Config("eval_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("job config serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OrchestratorError> {
        let job: JobConfig = serde_json::from_slice(bytes)?;
        job.validate()?;
        Ok(job)
    }

    pub fn loss_kind_at(&self, coord: CellCoord) -> Result<LossKind, OrchestratorError> {
        Ok(self.loss_mode.kind_for_cell(self.grid.index_of(coord)?))
    }
}

/// A finished cell as reported to the master.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerResult {
    pub rank: Rank,
    pub coord: CellCoord,
    pub loss_kind: LossKind,
    pub epochs: u64,
    pub center_gen: MlpParams,
    pub center_disc: MlpParams,
    pub center_gen_fitness: Option<f64>,
    pub center_disc_fitness: Option<f64>,
    pub ensemble: CellEnsemble,
    pub profile: ProfileReport,
    pub stats: Vec<EpochStats>,
    /// Neighbors dropped after their worker failed.
    pub lost_neighbors: Vec<CellCoord>,
}

/// Drives one cell: training epochs, center encoding for the exchange and
/// absorption of neighbor centers. Shared by the workers and the
/// single-process baseline so both compute identical results.
pub struct CellRunner {
    pub cell: Cell,
    data: DataStream,
    train: TrainConfig,
    generator: MlpArch,
    discriminator: MlpArch,
    evaluator: Arc<dyn Evaluator + Send + Sync>,
    profile: ProfileReport,
    started: Instant,
    stats: Vec<EpochStats>,
    lost: BTreeSet<CellCoord>,
}

impl CellRunner {
    pub fn new(
        job: &JobConfig,
        coord: CellCoord,
        dataset: Dataset,
        evaluator: Arc<dyn Evaluator + Send + Sync>,
    ) -> Result<Self, OrchestratorError> {
        let kind = job.loss_kind_at(coord)?;
        let cell = Cell::new(&job.grid, coord, &job.generator, &job.discriminator, kind, &job.train)?;
        Ok(Self {
            cell,
            data: DataStream::new(dataset, stream_seed(job.train.seed, coord, STREAM_DATA)),
            train: job.train.clone(),
            generator: job.generator.clone(),
            discriminator: job.discriminator.clone(),
            evaluator,
            profile: ProfileReport::default(),
            started: Instant::now(),
            stats: Vec::new(),
            lost: BTreeSet::new(),
        })
    }

    pub fn coord(&self) -> CellCoord {
        self.cell.coord
    }

    pub fn epoch(&self) -> u64 {
        self.cell.epoch
    }

    pub fn train_epoch(&mut self) -> Result<&EpochStats, OrchestratorError> {
        let s = train_epoch(&mut self.cell, &mut self.data, &self.train, self.evaluator.as_ref())?;
        self.profile.add(Routine::Train, s.train_secs);
        self.profile.add(Routine::UpdateGenomes, s.update_genomes_secs);
        self.profile.add(Routine::Mutate, s.mutate_secs);
        self.stats.push(s);
        Ok(self.stats.last().expect("just pushed"))
    }

    /// The cell's current centers in the exchange format.
    pub fn contribution(&self) -> Vec<u8> {
        encode_center(self.cell.coord, &self.cell.center_gen, &self.cell.center_disc)
    }

    /// Stores a neighbor's centers; the cell's own contribution is ignored.
    pub fn absorb_bytes(&mut self, bytes: &[u8]) -> Result<CellCoord, OrchestratorError> {
        let (coord, gen, disc) = decode_center(bytes, &self.generator, &self.discriminator)?;
        if coord != self.cell.coord {
            self.cell.absorb(coord, gen, disc)?;
        }
        Ok(coord)
    }

    pub fn record(&mut self, routine: Routine, secs: f64) {
        self.profile.add(routine, secs);
    }

    /// Drops a neighbor whose worker failed.
    pub fn lose_neighbor(&mut self, coord: CellCoord) {
        if coord != self.cell.coord && self.lost.insert(coord) {
            log::warn!("cell {} continues without neighbor {coord}", self.cell.coord);
            self.cell.forget(coord);
        }
    }

    pub fn finish(self, rank: Rank) -> WorkerResult {
        let mut profile = self.profile;
        profile.overall = self.started.elapsed().as_secs_f64();
        profile.other = (profile.overall - profile.routine_sum()).max(0.0);
        WorkerResult {
            rank,
            coord: self.cell.coord,
            loss_kind: self.cell.loss_kind,
            epochs: self.cell.epoch,
            ensemble: self.cell.ensemble(),
            center_gen_fitness: self.cell.center_gen_fitness,
            center_disc_fitness: self.cell.center_disc_fitness,
            center_gen: self.cell.center_gen,
            center_disc: self.cell.center_disc,
            profile,
            stats: self.stats,
            lost_neighbors: self.lost.into_iter().collect(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::coevolution::GanEvaluator;
    use crate::nn::Activation;

    pub(crate) fn ring_job(grid: &str, iterations: usize) -> JobConfig {
        JobConfig {
            grid: grid.parse().unwrap(),
            train: TrainConfig {
                iterations,
                batch_size: 16,
                batches_per_epoch: 2,
                seed: 5,
                ..Default::default()
            },
            dataset: DatasetSpec::ring(),
            generator: MlpArch::new(2, vec![8], 2, Activation::Tanh, Activation::Linear).unwrap(),
            discriminator: MlpArch::new(2, vec![8], 1, Activation::Tanh, Activation::Sigmoid).unwrap(),
            loss_mode: LossMode::UniformBce,
            deterministic: false,
            eval_samples: 200,
        }
    }

    #[test]
    fn job_round_trips_and_validates() {
        let job = ring_job("2x2", 3);
        assert_eq!(JobConfig::from_bytes(&job.to_bytes()).unwrap(), job);
        let mut bad = job.clone();
        bad.generator.output_dim = 3;
        assert!(bad.validate().is_err());
        let mut bad = job.clone();
        bad.discriminator.output_activation = Activation::Linear;
        assert!(bad.validate().is_err());
        assert!(JobConfig::from_bytes(b"{}").is_err());
    }

    #[test]
    fn runner_exchange_round_trip() {
        let job = ring_job("2x2", 1);
        let ds = Dataset::load(&job.dataset).unwrap();
        let ev: Arc<dyn Evaluator + Send + Sync> = Arc::new(GanEvaluator);
        let mut a = CellRunner::new(&job, CellCoord::new(0, 0), ds.clone(), ev.clone()).unwrap();
        let b = CellRunner::new(&job, CellCoord::new(0, 1), ds, ev).unwrap();
        assert_eq!(a.absorb_bytes(&b.contribution()).unwrap(), CellCoord::new(0, 1));
        assert_eq!(a.cell.neighbor_gens[&CellCoord::new(0, 1)], b.cell.center_gen);
        let own = a.contribution();
        a.absorb_bytes(&own).unwrap();
        a.train_epoch().unwrap();
        let r = a.finish(1);
        assert_eq!(r.epochs, 1);
        assert!(r.profile.routine_sum() <= r.profile.overall + 1e-9);
    }
}
