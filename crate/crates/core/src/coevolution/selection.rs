use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CoevoError, Hyperparams, TrainConfig};

/// Bounds applied after a learning-rate mutation.
pub const LR_MIN: f64 = 1e-8;
pub const LR_MAX: f64 = 0.1;

/// Winner among the drawn indices: lowest fitness, ties to the lowest index.
pub fn tournament_pick(fitness: &[f64], draws: &[usize]) -> usize {
    draws
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let fa = if fitness[a].is_nan() { f64::INFINITY } else { fitness[a] };
            let fb = if fitness[b].is_nan() { f64::INFINITY } else { fitness[b] };
            fa.total_cmp(&fb).then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Draws `k` candidates uniformly with replacement and returns the index of
/// the fittest (lowest) one.
pub fn tournament_select<R: Rng + ?Sized>(fitness: &[f64], k: usize, rng: &mut R) -> Result<usize, CoevoError> {
    if fitness.is_empty() {
        return Err(CoevoError::EmptyCandidates);
    }
    let draws: Vec<usize> = (0..k.max(1)).map(|_| rng.random_range(0..fitness.len())).collect();
    Ok(tournament_pick(fitness, &draws))
}

/// Mutation rule with the random draws supplied: if `uniform < prob` the rate
/// moves by `delta` and is clamped to `[LR_MIN, LR_MAX]`.
pub fn mutated_learning_rate(lr: f64, uniform: f64, delta: f64, prob: f64) -> f64 {
    if uniform < prob {
        (lr + delta).clamp(LR_MIN, LR_MAX)
    } else {
        lr
    }
}

pub fn mutate_learning_rate<R: Rng + ?Sized>(hyper: Hyperparams, cfg: &TrainConfig, rng: &mut R) -> Hyperparams {
    let uniform: f64 = rng.random();
    if uniform >= cfg.mutation_prob || cfg.lr_sigma == 0.0 {
        return hyper;
    }
    let delta = Normal::new(0.0, cfg.lr_sigma)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0);
    Hyperparams {
        learning_rate: mutated_learning_rate(hyper.learning_rate, uniform, delta, cfg.mutation_prob),
    }
}

/// Adds `noise`, clamps at zero and renormalizes; falls back to uniform when
/// every entry clamps away.
pub fn perturb_mixture(weights: &[f64], noise: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = weights
        .iter()
        .zip(noise)
        .map(|(w, n)| (w + n).max(0.0))
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 && total.is_finite() {
        out.iter_mut().for_each(|w| *w /= total);
    } else {
        let u = 1.0 / out.len().max(1) as f64;
        out.iter_mut().for_each(|w| *w = u);
    }
    out
}

pub fn mutate_mixture_weights<R: Rng + ?Sized>(weights: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 || weights.is_empty() {
        return weights.to_vec();
    }
    let normal = match Normal::new(0.0, sigma) {
        Ok(n) => n,
        Err(_) => return weights.to_vec(),
    };
    let noise: Vec<f64> = weights.iter().map(|_| normal.sample(rng)).collect();
    perturb_mixture(weights, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_candidate_always_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(tournament_select(&[3.5], 2, &mut rng).unwrap(), 0);
        }
        assert!(matches!(tournament_select(&[], 2, &mut rng), Err(CoevoError::EmptyCandidates)));
    }

    #[test]
    fn exhaustive_draws_pick_best_present() {
        // All 3^3 draws of k = 3 from 3 candidates: the winner is always the
        // fittest drawn candidate, and the global best wins whenever drawn.
        let fitness = [0.7, 0.2, 0.5];
        let mut best_wins = 0;
        let mut best_drawn = 0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let draws = [a, b, c];
                    let w = tournament_pick(&fitness, &draws);
                    let expect = *draws
                        .iter()
                        .min_by(|&&x, &&y| fitness[x].partial_cmp(&fitness[y]).unwrap())
                        .unwrap();
                    assert_eq!(w, expect);
                    if draws.contains(&1) {
                        best_drawn += 1;
                        best_wins += usize::from(w == 1);
                    }
                }
            }
        }
        assert_eq!(best_drawn, 27 - 8);
        assert_eq!(best_wins, best_drawn);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(tournament_pick(&[1.0, 0.5, 0.5], &[2, 1]), 1);
        assert_eq!(tournament_pick(&[1.0, 0.5, 0.5], &[2, 2, 1]), 1);
    }

    #[test]
    fn learning_rate_mutation_rule() {
        assert_eq!(mutated_learning_rate(0.0002, 0.9, 0.5, 0.5), 0.0002);
        assert!((mutated_learning_rate(0.0002, 0.1, 0.0001, 0.5) - 0.0003).abs() < 1e-15);
        assert_eq!(mutated_learning_rate(0.0002, 0.1, -1.0, 0.5), LR_MIN);
        assert_eq!(mutated_learning_rate(0.0002, 0.1, 1.0, 0.5), LR_MAX);
    }

    #[test]
    fn mixture_zero_sigma_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.1, 0.3, 0.6];
        assert_eq!(mutate_mixture_weights(&w, 0.0, &mut rng), w.to_vec());
        let u = perturb_mixture(&[0.2; 5], &[0.0; 5]);
        assert!(u.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let reset = perturb_mixture(&[0.5, 0.5], &[-1.0, -2.0]);
        assert_eq!(reset, vec![0.5, 0.5]);
    }

    #[test]
    fn mixture_stays_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut w = vec![0.2; 5];
        for _ in 0..1000 {
            w = mutate_mixture_weights(&w, 0.01, &mut rng);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // large noise exercises the clamp path
        for _ in 0..1000 {
            w = mutate_mixture_weights(&w, 1.0, &mut rng);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
