use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fitness::latent_from_rng;
use super::CoevoError;
use crate::data::{quality, DatasetSpec, QualityScore};
use crate::grid::CellCoord;
use crate::nn::{Batch, MlpParams};

/// A cell's generator mixture: generators of its available neighborhood
/// members with weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEnsemble {
    pub coord: CellCoord,
    pub members: Vec<CellCoord>,
    /// Not part of the JSON form; parameters travel in the binary format.
    #[serde(skip)]
    pub generators: Vec<MlpParams>,
    pub weights: Vec<f64>,
    /// Center generator fitness at the last replacement, if any.
    pub generator_fitness: Option<f64>,
}

impl CellEnsemble {
    /// Index of the generator chosen by a uniform draw `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // rounding leaves `acc` slightly below 1
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

/// Score of an ensemble under some quality metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleScore {
    /// Mode coverage on a synthetic mixture; higher is better.
    Coverage(QualityScore),
    /// A loss value; lower is better.
    Loss { value: f64 },
}

impl EnsembleScore {
    /// Strictly better. Scores of different kinds never compare as better.
    pub fn better_than(&self, other: &EnsembleScore) -> bool {
        match (self, other) {
            (EnsembleScore::Coverage(a), EnsembleScore::Coverage(b)) => a.better_than(b),
            (EnsembleScore::Loss { value: a }, EnsembleScore::Loss { value: b }) => {
                !a.is_nan() && (b.is_nan() || a < b)
            }
            _ => false,
        }
    }
}

/// Outcome of [`select_best_ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: CellEnsemble,
    pub score: EnsembleScore,
    /// Score of every candidate, in input order.
    pub scores: Vec<(CellCoord, EnsembleScore)>,
}

/// Draws `n` samples from the mixture: each sample comes from generator `i`
/// with probability `weights[i]`.
pub fn sample_mixture(ensemble: &CellEnsemble, n: usize, seed: u64) -> Result<Batch, CoevoError> {
    if ensemble.generators.is_empty() || n == 0 {
        return Err(CoevoError::EmptyCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; ensemble.generators.len()];
    for _ in 0..n {
        counts[ensemble.pick(rng.random())] += 1;
    }
    let dim = ensemble.generators[0].arch.output_dim;
    let mut data = Vec::with_capacity(n * dim);
    for (g, &c) in ensemble.generators.iter().zip(&counts) {
        if c == 0 {
            continue;
        }
        let z = latent_from_rng(c, g.arch.input_dim, &mut rng);
        data.extend_from_slice(g.predict(&z)?.data());
    }
    Ok(Batch::new(n, dim, data)?)
}

/// Mode-coverage metric over `n` mixture samples.
pub fn mode_coverage_metric(
    spec: DatasetSpec,
    n: usize,
    seed: u64,
) -> impl Fn(&CellEnsemble) -> Result<EnsembleScore, CoevoError> {
    move |e| {
        let samples = sample_mixture(e, n, seed)?;
        Ok(EnsembleScore::Coverage(quality(&samples, &spec)?))
    }
}

/// Scores every ensemble and returns the best one. Candidates are expected
/// in rank order; ties keep the earlier candidate.
pub fn select_best_ensemble<F>(ensembles: &[CellEnsemble], metric: F) -> Result<Selection, CoevoError>
where
    F: Fn(&CellEnsemble) -> Result<EnsembleScore, CoevoError>,
{
    let mut scores: Vec<(CellCoord, EnsembleScore)> = Vec::with_capacity(ensembles.len());
    let mut best: Option<usize> = None;
    for (i, e) in ensembles.iter().enumerate() {
        let s = metric(e)?;
        if best.is_none_or(|b| s.better_than(&scores[b].1)) {
            best = Some(i);
        }
        scores.push((e.coord, s));
    }
    let b = best.ok_or(CoevoError::EmptyCandidates)?;
    Ok(Selection {
        best: ensembles[b].clone(),
        score: scores[b].1,
        scores,
    })
}
