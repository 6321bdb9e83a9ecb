use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::fitness::latent_from_rng;
use super::selection::{mutate_learning_rate, mutate_mixture_weights, tournament_select};
use super::{Cell, CoevoError, Evaluator, TrainConfig};
use crate::data::{DataStream, Profiler, Routine};
use crate::losses::{discriminator_loss, generator_loss, loss_gradient_at_output, LossKind, LossTerm};
use crate::nn::{adam_step, AdamState, Batch, MlpParams};

/// Per-epoch summary. Times are seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub subpopulation: usize,
    pub learning_rate: f64,
    pub disc_updates: usize,
    pub gen_updates: usize,
    /// Mean training losses over the epoch's steps; `None` when none ran.
    pub gen_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub center_gen_fitness: f64,
    pub center_disc_fitness: f64,
    /// Whether the freshly trained individuals became the new centers.
    pub trained_gen_kept: bool,
    pub trained_disc_kept: bool,
    pub train_secs: f64,
    pub update_genomes_secs: f64,
    pub mutate_secs: f64,
    /// Longest single training step.
    pub max_step_secs: f64,
}

struct Scored {
    gen_fitness: Vec<f64>,
    disc_fitness: Vec<f64>,
}

/// Fitness of every generator against all discriminators and vice versa.
fn score_all(
    gens: &[&MlpParams],
    discs: &[&MlpParams],
    kind: LossKind,
    real: &Batch,
    seed: u64,
    evaluator: &dyn Evaluator,
) -> Result<Scored, CoevoError> {
    let gen_fitness = gens
        .iter()
        .map(|g| evaluator.generator_fitness(g, discs, kind, real, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let disc_fitness = discs
        .iter()
        .map(|d| evaluator.discriminator_fitness(d, gens, kind, real, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scored {
        gen_fitness,
        disc_fitness,
    })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[best]).is_lt() {
            best = i;
        }
    }
    best
}

fn discriminator_step(
    disc: &mut MlpParams,
    opt: &mut AdamState,
    gen: &MlpParams,
    real: &Batch,
    kind: LossKind,
    rng: &mut dyn RngCore,
) -> Result<f64, CoevoError> {
    let z = latent_from_rng(real.rows(), gen.arch.input_dim, rng);
    let fake = gen.predict(&z)?;
    let cache = disc.forward(&real.concat(&fake)?)?;
    let (p_real, p_fake) = cache.output().split_at(real.rows());
    let loss = discriminator_loss(kind, p_real, p_fake)?;
    // Both halves are batch means; backward averages over 2n rows.
    let mut grad = loss_gradient_at_output(kind, LossTerm::DiscriminatorReal, p_real)?;
    grad.extend(loss_gradient_at_output(kind, LossTerm::DiscriminatorFake, p_fake)?);
    grad.iter_mut().for_each(|g| *g *= 2.0);
    let bp = disc.backward(&cache, &grad)?;
    adam_step(disc, &bp.grads, opt)?;
    Ok(loss)
}

fn generator_step(
    gen: &mut MlpParams,
    opt: &mut AdamState,
    disc: &MlpParams,
    rows: usize,
    kind: LossKind,
    rng: &mut dyn RngCore,
) -> Result<f64, CoevoError> {
    let z = latent_from_rng(rows, gen.arch.input_dim, rng);
    let g_cache = gen.forward(&z)?;
    let d_cache = disc.forward(&g_cache.output_batch())?;
    let loss = generator_loss(kind, d_cache.output())?;
    let grad = loss_gradient_at_output(kind, LossTerm::Generator, d_cache.output())?;
    let through_disc = disc.backward(&d_cache, &grad)?;
    let bp = gen.backward(&g_cache, &through_disc.input_grad)?;
    adam_step(gen, &bp.grads, opt)?;
    Ok(loss)
}

/// Runs one epoch on `cell`:
///
/// 1. tournament-select a generator and a discriminator from the
///    sub-population (center plus received neighbor copies);
/// 2. mutate the learning rate;
/// 3. train the selected pair for `batches_per_epoch` steps, updating the
///    discriminator on the skip schedule;
/// 4. score the trained pair together with every sub-population member;
/// 5. promote the fittest generator and discriminator to the centers;
/// 6. mutate the mixture weights.
pub fn train_epoch(
    cell: &mut Cell,
    data: &mut DataStream,
    cfg: &TrainConfig,
    evaluator: &dyn Evaluator,
) -> Result<EpochStats, CoevoError> {
    let mut prof = Profiler::new();
    let kind = cell.loss_kind;
    let members = cell.available_members();
    if members.len() < cell.neighborhood.len() {
        log::debug!(
            "cell {} training with {}/{} sub-population members",
            cell.coord,
            members.len(),
            cell.neighborhood.len()
        );
    }

    // (1) selection
    let (gi, dj) = prof.section(Routine::UpdateGenomes, |_| -> Result<_, CoevoError> {
        let real = data.next_batch(cfg.batch_size)?;
        let seed = cell.rng.next_u64();
        let scored = {
            let gens: Vec<&MlpParams> = members.iter().filter_map(|&m| cell.generator_of(m)).collect();
            let discs: Vec<&MlpParams> = members.iter().filter_map(|&m| cell.discriminator_of(m)).collect();
            score_all(&gens, &discs, kind, &real, seed, evaluator)?
        };
        let gi = tournament_select(&scored.gen_fitness, cfg.tournament_size, &mut cell.rng)?;
        let dj = tournament_select(&scored.disc_fitness, cfg.tournament_size, &mut cell.rng)?;
        Ok((gi, dj))
    })?;

    // (2) hyperparameter mutation
    prof.section(Routine::Mutate, |_| {
        cell.hyper = mutate_learning_rate(cell.hyper, cfg, &mut cell.rng);
    });

    // (3) gradient training of the selected pair
    let mut gen = cell.generator_of(members[gi]).cloned().expect("member present");
    let mut disc = cell.discriminator_of(members[dj]).cloned().expect("member present");
    let mut gen_opt = if gi == 0 {
        cell.gen_opt.clone()
    } else {
        AdamState::new(&gen, cell.hyper.learning_rate)
    };
    let mut disc_opt = if dj == 0 {
        cell.disc_opt.clone()
    } else {
        AdamState::new(&disc, cell.hyper.learning_rate)
    };
    gen_opt.lr = cell.hyper.learning_rate;
    disc_opt.lr = cell.hyper.learning_rate;

    let mut stats = EpochStats {
        epoch: cell.epoch + 1,
        subpopulation: members.len(),
        learning_rate: cell.hyper.learning_rate,
        ..Default::default()
    };
    let (mut gen_loss_sum, mut disc_loss_sum) = (0.0, 0.0);
    prof.section(Routine::Train, |_| -> Result<(), CoevoError> {
        for step in 0..cfg.batches_per_epoch {
            let t = Instant::now();
            let real = data.next_batch(cfg.batch_size)?;
            if cfg.trains_discriminator_at(step) {
                disc_loss_sum += discriminator_step(&mut disc, &mut disc_opt, &gen, &real, kind, &mut cell.rng)?;
                stats.disc_updates += 1;
            }
            gen_loss_sum += generator_step(&mut gen, &mut gen_opt, &disc, cfg.batch_size, kind, &mut cell.rng)?;
            stats.gen_updates += 1;
            stats.max_step_secs = stats.max_step_secs.max(t.elapsed().as_secs_f64());
        }
        Ok(())
    })?;
    stats.gen_loss = (stats.gen_updates > 0).then(|| gen_loss_sum / stats.gen_updates as f64);
    stats.disc_loss = (stats.disc_updates > 0).then(|| disc_loss_sum / stats.disc_updates as f64);

    // (4) + (5) re-evaluation and center replacement
    prof.section(Routine::UpdateGenomes, |_| -> Result<(), CoevoError> {
        let real = data.next_batch(cfg.batch_size)?;
        let seed = cell.rng.next_u64();
        let mut gens: Vec<&MlpParams> = vec![&gen];
        gens.extend(members.iter().filter_map(|&m| cell.generator_of(m)));
        let mut discs: Vec<&MlpParams> = vec![&disc];
        discs.extend(members.iter().filter_map(|&m| cell.discriminator_of(m)));
        let scored = score_all(&gens, &discs, kind, &real, seed, evaluator)?;
        let bg = argmin(&scored.gen_fitness);
        let bd = argmin(&scored.disc_fitness);
        stats.center_gen_fitness = scored.gen_fitness[bg];
        stats.center_disc_fitness = scored.disc_fitness[bd];
        stats.trained_gen_kept = bg == 0;
        stats.trained_disc_kept = bd == 0;
        let new_gen = gens[bg].clone();
        let new_disc = discs[bd].clone();
        // Keep optimizer state only for an individual that was just trained.
        let lr = cell.hyper.learning_rate;
        cell.gen_opt = if bg == 0 { gen_opt.clone() } else { AdamState::new(&new_gen, lr) };
        cell.disc_opt = if bd == 0 { disc_opt.clone() } else { AdamState::new(&new_disc, lr) };
        cell.center_gen = new_gen;
        cell.center_disc = new_disc;
        Ok(())
    })?;
    cell.center_gen_fitness = Some(stats.center_gen_fitness);
    cell.center_disc_fitness = Some(stats.center_disc_fitness);

    // (6) mixture mutation
    prof.section(Routine::Mutate, |_| {
        cell.mixture_weights = mutate_mixture_weights(&cell.mixture_weights, cfg.mixture_sigma, &mut cell.rng);
    });
    cell.epoch += 1;

    let report = prof.finish();
    stats.train_secs = report.train;
    stats.update_genomes_secs = report.update_genomes;
    stats.mutate_secs = report.mutate;
    Ok(stats)
}
