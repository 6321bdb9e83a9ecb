use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::idx::{self, IdxTensor};
use super::DataError;
use crate::nn::Batch;

/// What to sample real data from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussians evenly spaced on a circle.
    Ring2d { modes: usize, radius: f64, std: f64 },
    /// `side x side` Gaussians on a square lattice centered at the origin.
    Grid2d { side: usize, spacing: f64, std: f64 },
    /// MNIST-style IDX image file (labels are optional and unused for training).
    MnistIdx {
        images: PathBuf,
        labels: Option<PathBuf>,
    },
}

impl DatasetSpec {
    /// 8 modes on a radius-2 circle, std 0.05.
    pub fn ring() -> Self {
        DatasetSpec::Ring2d {
            modes: 8,
            radius: 2.0,
            std: 0.05,
        }
    }

    /// 25 modes on {-4, -2, 0, 2, 4}^2, std 0.05.
    pub fn grid25() -> Self {
        DatasetSpec::Grid2d {
            side: 5,
            spacing: 2.0,
            std: 0.05,
        }
    }

    pub fn mnist(images: impl Into<PathBuf>, labels: Option<PathBuf>) -> Self {
        DatasetSpec::MnistIdx {
            images: images.into(),
            labels,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Ring2d { .. } => "ring",
            DatasetSpec::Grid2d { .. } => "grid25",
            DatasetSpec::MnistIdx { .. } => "mnist",
        }
    }

    pub fn sample_dim(&self) -> usize {
        match self {
            DatasetSpec::MnistIdx { .. } => 784,
            _ => 2,
        }
    }

    /// Mode centers of the synthetic mixtures; `None` for image data.
    pub fn centers(&self) -> Option<Vec<[f64; 2]>> {
        match *self {
            DatasetSpec::Ring2d { modes, radius, .. } => Some(
                (0..modes)
                    .map(|k| {
                        let a = std::f64::consts::TAU * k as f64 / modes as f64;
                        [radius * a.cos(), radius * a.sin()]
                    })
                    .collect(),
            ),
            DatasetSpec::Grid2d { side, spacing, .. } => {
                let offset = (side as f64 - 1.0) / 2.0;
                Some(
                    (0..side)
                        .flat_map(|i| (0..side).map(move |j| (i, j)))
                        .map(|(i, j)| {
                            [
                                (i as f64 - offset) * spacing,
                                (j as f64 - offset) * spacing,
                            ]
                        })
                        .collect(),
                )
            }
            DatasetSpec::MnistIdx { .. } => None,
        }
    }

    pub fn mode_std(&self) -> Option<f64> {
        match *self {
            DatasetSpec::Ring2d { std, .. } | DatasetSpec::Grid2d { std, .. } => Some(std),
            DatasetSpec::MnistIdx { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        match *self {
            DatasetSpec::Ring2d { modes, radius, std } => {
                if modes == 0 || !radius.is_finite() || !(std >= 0.0) {
                    return Err(DataError::Invalid(format!(
                        "ring needs modes >= 1, finite radius, std >= 0 (got {modes}, {radius}, {std})"
                    )));
                }
            }
            DatasetSpec::Grid2d { side, spacing, std } => {
                if side == 0 || !spacing.is_finite() || !(std >= 0.0) {
                    return Err(DataError::Invalid(format!(
                        "grid needs side >= 1, finite spacing, std >= 0 (got {side}, {spacing}, {std})"
                    )));
                }
            }
            DatasetSpec::MnistIdx { .. } => {}
        }
        Ok(())
    }
}

/// A dataset ready for sampling. Image files are read once and shared.
#[derive(Debug, Clone)]
pub enum Dataset {
    Mixture { centers: Vec<[f64; 2]>, std: f64 },
    Images { pixels: Arc<IdxTensor> },
}

impl Dataset {
    pub fn load(spec: &DatasetSpec) -> Result<Self, DataError> {
        spec.validate()?;
        match spec {
            DatasetSpec::MnistIdx { images, .. } => {
                let bytes = std::fs::read(images).map_err(|source| DataError::Io {
                    path: images.display().to_string(),
                    source,
                })?;
                let tensor = idx::parse_idx(&bytes)?;
                if tensor.dims.len() != 3 || tensor.dims[1] * tensor.dims[2] != 784 || tensor.dims[0] == 0 {
                    return Err(DataError::Invalid(format!(
                        "expected N x 28 x 28 images, got dims {:?}",
                        tensor.dims
                    )));
                }
                Ok(Dataset::Images {
                    pixels: Arc::new(tensor),
                })
            }
            _ => Ok(Dataset::Mixture {
                centers: spec.centers().unwrap_or_default(),
                std: spec.mode_std().unwrap_or(0.0),
            }),
        }
    }

    pub fn sample_dim(&self) -> usize {
        match self {
            Dataset::Mixture { .. } => 2,
            Dataset::Images { .. } => 784,
        }
    }

    /// Draws `n` samples. Mixture samples pick a mode uniformly and add
    /// isotropic Gaussian noise; images are drawn uniformly with replacement
    /// and scaled to [-1, 1].
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch, DataError> {
        if n == 0 {
            return Err(DataError::EmptySample);
        }
        let data = match self {
            Dataset::Mixture { centers, std } => {
                let noise = Normal::new(0.0, *std).map_err(|e| DataError::Invalid(e.to_string()))?;
                let mut data = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let c = centers[rng.random_range(0..centers.len())];
                    data.push((c[0] + noise.sample(rng)) as f32);
                    data.push((c[1] + noise.sample(rng)) as f32);
                }
                data
            }
            Dataset::Images { pixels } => {
                let count = pixels.dims[0];
                let mut data = Vec::with_capacity(784 * n);
                for _ in 0..n {
                    let i = rng.random_range(0..count);
                    data.extend(
                        pixels.data[i * 784..(i + 1) * 784]
                            .iter()
                            .map(|&p| f32::from(p) / 127.5 - 1.0),
                    );
                }
                data
            }
        };
        Batch::new(n, self.sample_dim(), data).map_err(|e| DataError::Invalid(e.to_string()))
    }
}

/// Deterministic samples for a `(spec, n, seed)` triple.
pub fn sample_dataset(spec: &DatasetSpec, n: usize, seed: u64) -> Result<Batch, DataError> {
    let ds = Dataset::load(spec)?;
    ds.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Endless batch iterator with its own RNG stream.
#[derive(Debug, Clone)]
pub struct DataStream {
    dataset: Dataset,
    rng: ChaCha8Rng,
}

impl DataStream {
    pub fn new(dataset: Dataset, seed: u64) -> Self {
        Self {
            dataset,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Batch, DataError> {
        self.dataset.sample(n, &mut self.rng)
    }
}
