//! Per-cell coevolutionary training.
//!
//! Every cell owns a center generator/discriminator pair plus the most recent
//! copies of its neighbors' centers. One epoch selects a pair from that
//! sub-population, trains it, then promotes the fittest individuals to the
//! center slots.

mod ensemble;
mod epoch;
mod fitness;
mod selection;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::grid::{neighborhood, CellCoord, GridError, GridSpec, Neighborhood};
use crate::losses::{LossError, LossKind};
use crate::nn::{AdamState, MlpArch, MlpParams, NnError};

pub use ensemble::{mode_coverage_metric, sample_mixture, select_best_ensemble, CellEnsemble, EnsembleScore, Selection};
pub use epoch::{train_epoch, EpochStats};
pub use fitness::{
    evaluate_discriminator_fitness, evaluate_generator_fitness, latent_batch, Evaluator, GanEvaluator,
};
pub use selection::{
    mutate_learning_rate, mutate_mixture_weights, mutated_learning_rate, perturb_mixture, tournament_pick,
    tournament_select, LR_MAX, LR_MIN,
};

#[derive(Debug, Error)]
pub enum CoevoError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("fitness needs at least one opponent")]
    NoOpponents,
    #[error("{0} is not a neighbor of {1}")]
    ForeignNeighbor(CellCoord, CellCoord),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
}

/// Coevolution settings; defaults follow the reference MNIST setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of epochs (exchange rounds).
    pub iterations: usize,
    pub batch_size: usize,
    /// Gradient steps per epoch; 0 disables training.
    pub batches_per_epoch: usize,
    pub tournament_size: usize,
    pub population_per_cell: usize,
    pub learning_rate: f64,
    pub mixture_sigma: f64,
    /// Standard deviation of the additive learning-rate mutation.
    pub lr_sigma: f64,
    pub mutation_prob: f64,
    /// The discriminator is updated on every `(skip_disc_steps + 1)`-th step.
    pub skip_disc_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_size: 100,
            batches_per_epoch: 10,
            tournament_size: 2,
            population_per_cell: 1,
            learning_rate: 0.0002,
            mixture_sigma: 0.01,
            lr_sigma: 0.0001,
            mutation_prob: 0.5,
            skip_disc_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoevoError> {
        let err = |m: &str| Err(CoevoError::Config(m.to_string()));
        if self.iterations == 0 {
            return err("iterations must be >= 1");
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1");
        }
        if self.tournament_size == 0 {
            return err("tournament_size must be >= 1");
        }
        if self.population_per_cell != 1 {
            return err("population_per_cell must be 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return err("learning_rate must be in (0, 1)");
        }
        if !(self.mixture_sigma >= 0.0) || !(self.lr_sigma >= 0.0) {
            return err("mutation scales must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return err("mutation_prob must be in [0, 1]");
        }
        Ok(())
    }

    /// Whether the discriminator is updated on step `step` of an epoch.
    pub fn trains_discriminator_at(&self, step: usize) -> bool {
        step.is_multiple_of(self.skip_disc_steps + 1)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of a cell's private RNG stream: `seed ^ hash(coord)`, so results do
/// not depend on which worker hosts the cell.
pub fn cell_seed(seed: u64, coord: CellCoord) -> u64 {
    seed ^ mix64(((coord.row as u64) << 32) | coord.col as u64)
}

/// Derived seed for a named sub-stream of a cell.
pub(crate) fn stream_seed(seed: u64, coord: CellCoord, stream: u64) -> u64 {
    mix64(cell_seed(seed, coord) ^ mix64(stream))
}

const STREAM_GEN_INIT: u64 = 1;
const STREAM_DISC_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
pub(crate) const STREAM_DATA: u64 = 4;

/// One grid position with its sub-population.
#[derive(Debug, Clone)]
pub struct Cell {
    pub coord: CellCoord,
    pub neighborhood: Neighborhood,
    pub center_gen: MlpParams,
    pub center_disc: MlpParams,
    pub neighbor_gens: BTreeMap<CellCoord, MlpParams>,
    pub neighbor_discs: BTreeMap<CellCoord, MlpParams>,
    /// Aligned with `neighborhood.members`.
    pub mixture_weights: Vec<f64>,
    pub hyper: Hyperparams,
    pub loss_kind: LossKind,
    pub epoch: u64,
    /// Fitness recorded for the centers at the last replacement.
    pub center_gen_fitness: Option<f64>,
    pub center_disc_fitness: Option<f64>,
    gen_opt: AdamState,
    disc_opt: AdamState,
    rng: ChaCha8Rng,
}

impl Cell {
    pub fn new(
        grid: &GridSpec,
        coord: CellCoord,
        gen_arch: &MlpArch,
        disc_arch: &MlpArch,
        loss_kind: LossKind,
        cfg: &TrainConfig,
    ) -> Result<Self, CoevoError> {
        cfg.validate()?;
        if gen_arch.output_dim != disc_arch.input_dim || disc_arch.output_dim != 1 {
            return Err(CoevoError::Config(format!(
                "generator emits {} values, discriminator reads {} and emits {}",
                gen_arch.output_dim, disc_arch.input_dim, disc_arch.output_dim
            )));
        }
        let neighborhood = neighborhood(grid, coord)?;
        let center_gen = MlpParams::init(gen_arch, stream_seed(cfg.seed, coord, STREAM_GEN_INIT))?;
        let center_disc = MlpParams::init(disc_arch, stream_seed(cfg.seed, coord, STREAM_DISC_INIT))?;
        let s = neighborhood.len();
        Ok(Self {
            coord,
            mixture_weights: vec![1.0 / s as f64; s],
            neighborhood,
            gen_opt: AdamState::new(&center_gen, cfg.learning_rate),
            disc_opt: AdamState::new(&center_disc, cfg.learning_rate),
            center_gen,
            center_disc,
            neighbor_gens: BTreeMap::new(),
            neighbor_discs: BTreeMap::new(),
            hyper: Hyperparams {
                learning_rate: cfg.learning_rate,
            },
            loss_kind,
            epoch: 0,
            center_gen_fitness: None,
            center_disc_fitness: None,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, coord, STREAM_TRAIN)),
        })
    }

    /// Stores the latest center copies received from `source`.
    pub fn absorb(&mut self, source: CellCoord, gen: MlpParams, disc: MlpParams) -> Result<(), CoevoError> {
        if source == self.coord || !self.neighborhood.contains(source) {
            return Err(CoevoError::ForeignNeighbor(source, self.coord));
        }
        self.neighbor_gens.insert(source, gen);
        self.neighbor_discs.insert(source, disc);
        Ok(())
    }

    /// Drops a neighbor's copies, e.g. after its worker failed.
    pub fn forget(&mut self, source: CellCoord) {
        self.neighbor_gens.remove(&source);
        self.neighbor_discs.remove(&source);
    }

    /// Members with models available, in neighborhood order (center first).
    pub fn available_members(&self) -> Vec<CellCoord> {
        self.neighborhood
            .members
            .iter()
            .copied()
            .filter(|&m| m == self.coord || (self.neighbor_gens.contains_key(&m) && self.neighbor_discs.contains_key(&m)))
            .collect()
    }

    pub(crate) fn generator_of(&self, member: CellCoord) -> Option<&MlpParams> {
        if member == self.coord {
            Some(&self.center_gen)
        } else {
            self.neighbor_gens.get(&member)
        }
    }

    pub(crate) fn discriminator_of(&self, member: CellCoord) -> Option<&MlpParams> {
        if member == self.coord {
            Some(&self.center_disc)
        } else {
            self.neighbor_discs.get(&member)
        }
    }

    /// The cell's generator mixture over the available members, with the
    /// weights renormalized over those members.
    pub fn ensemble(&self) -> CellEnsemble {
        let members = self.available_members();
        let mut generators = Vec::with_capacity(members.len());
        let mut weights = Vec::with_capacity(members.len());
        for m in &members {
            let pos = self.neighborhood.position(*m).unwrap_or(0);
            generators.push(self.generator_of(*m).cloned().expect("available member has a generator"));
            weights.push(self.mixture_weights[pos]);
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            let u = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = u);
        }
        CellEnsemble {
            coord: self.coord,
            members,
            generators,
            weights,
            generator_fitness: self.center_gen_fitness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    pub(crate) fn tiny_arches() -> (MlpArch, MlpArch) {
        (
            MlpArch::new(2, vec![4], 2, Activation::Tanh, Activation::Linear).unwrap(),
            MlpArch::new(2, vec![4], 1, Activation::Tanh, Activation::Sigmoid).unwrap(),
        )
    }

    #[test]
    fn defaults_match_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.iterations, 200);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.tournament_size, 2);
        assert_eq!(c.population_per_cell, 1);
        assert_eq!(c.learning_rate, 0.0002);
        assert_eq!(c.mixture_sigma, 0.01);
        assert_eq!(c.lr_sigma, 0.0001);
        assert_eq!(c.mutation_prob, 0.5);
        assert_eq!(c.skip_disc_steps, 1);
    }

    #[test]
    fn cell_seeds_are_placement_independent() {
        let a = cell_seed(42, CellCoord::new(1, 2));
        assert_eq!(a, cell_seed(42, CellCoord::new(1, 2)));
        assert_ne!(a, cell_seed(42, CellCoord::new(2, 1)));
    }

    #[test]
    fn absorb_rejects_foreign_coords() {
        let grid = GridSpec::square(4).unwrap();
        let (g, d) = tiny_arches();
        let mut cell = Cell::new(&grid, CellCoord::new(0, 0), &g, &d, LossKind::Bce, &TrainConfig::default()).unwrap();
        let gen = cell.center_gen.clone();
        let disc = cell.center_disc.clone();
        assert!(cell.absorb(CellCoord::new(2, 2), gen.clone(), disc.clone()).is_err());
        assert!(cell.absorb(CellCoord::new(0, 0), gen.clone(), disc.clone()).is_err());
        cell.absorb(CellCoord::new(3, 0), gen, disc).unwrap();
        assert_eq!(cell.available_members(), vec![CellCoord::new(0, 0), CellCoord::new(3, 0)]);
        let e = cell.ensemble();
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(e.generators.len(), 2);
    }

    #[test]
    fn skip_schedule_alternates() {
        let c = TrainConfig::default();
        let steps: Vec<bool> = (0..5).map(|i| c.trains_discriminator_at(i)).collect();
        assert_eq!(steps, vec![true, false, true, false, true]);
    }
}
