use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::CoevoError;
use crate::losses::{discriminator_loss, generator_loss, LossKind};
use crate::nn::{Batch, MlpParams};
use crate::par;

/// Standard normal latent vectors, deterministic in `seed`.
pub fn latent_batch(rows: usize, dim: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latent_from_rng(rows, dim, &mut rng)
}

pub(crate) fn latent_from_rng<R: rand::Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Batch {
    let data = (0..rows * dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect();
    Batch::new(rows.max(1), dim, data).expect("latent batch is finite and non-empty")
}

/// Mean generator loss of `gen`'s samples against each discriminator.
/// Lower is fitter.
pub fn evaluate_generator_fitness(
    gen: &MlpParams,
    discs: &[&MlpParams],
    kind: LossKind,
    real_batch: &Batch,
    latent_seed: u64,
) -> Result<f64, CoevoError> {
    if discs.is_empty() {
        return Err(CoevoError::NoOpponents);
    }
    let z = latent_batch(real_batch.rows(), gen.arch.input_dim, latent_seed);
    let fake = gen.predict(&z)?;
    let work = fake.rows() * discs[0].param_count();
    let losses = par::map_range(discs.len(), work, |i| -> Result<f64, CoevoError> {
        let p = discs[i].forward(&fake)?;
        Ok(generator_loss(kind, p.output())?)
    });
    mean_of(losses)
}

/// Mean discriminator loss of `disc` on the real batch and on samples from
/// each generator. Lower is fitter.
pub fn evaluate_discriminator_fitness(
    disc: &MlpParams,
    gens: &[&MlpParams],
    kind: LossKind,
    real_batch: &Batch,
    latent_seed: u64,
) -> Result<f64, CoevoError> {
    if gens.is_empty() {
        return Err(CoevoError::NoOpponents);
    }
    let on_real = disc.forward(real_batch)?;
    let on_real = on_real.output();
    let work = real_batch.rows() * (disc.param_count() + gens[0].param_count());
    let losses = par::map_range(gens.len(), work, |i| -> Result<f64, CoevoError> {
        let z = latent_batch(real_batch.rows(), gens[i].arch.input_dim, latent_seed);
        let fake = gens[i].predict(&z)?;
        let on_fake = disc.forward(&fake)?;
        Ok(discriminator_loss(kind, on_real, on_fake.output())?)
    });
    mean_of(losses)
}

fn mean_of(values: Vec<Result<f64, CoevoError>>) -> Result<f64, CoevoError> {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(sum / n)
}

/// Source of fitness values for selection and replacement.
pub trait Evaluator: Send + Sync {
    fn generator_fitness(
        &self,
        gen: &MlpParams,
        discs: &[&MlpParams],
        kind: LossKind,
        real: &Batch,
        latent_seed: u64,
    ) -> Result<f64, CoevoError>;

    fn discriminator_fitness(
        &self,
        disc: &MlpParams,
        gens: &[&MlpParams],
        kind: LossKind,
        real: &Batch,
        latent_seed: u64,
    ) -> Result<f64, CoevoError>;
}

/// Fitness from the adversarial losses against the sub-population.
#[derive(Debug, Clone, Copy, Default)]
pub struct GanEvaluator;

impl Evaluator for GanEvaluator {
    fn generator_fitness(
        &self,
        gen: &MlpParams,
        discs: &[&MlpParams],
        kind: LossKind,
        real: &Batch,
        latent_seed: u64,
    ) -> Result<f64, CoevoError> {
        evaluate_generator_fitness(gen, discs, kind, real, latent_seed)
    }

    fn discriminator_fitness(
        &self,
        disc: &MlpParams,
        gens: &[&MlpParams],
        kind: LossKind,
        real: &Batch,
        latent_seed: u64,
    ) -> Result<f64, CoevoError> {
        evaluate_discriminator_fitness(disc, gens, kind, real, latent_seed)
    }
}
