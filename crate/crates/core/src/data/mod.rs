//! Datasets, the IDX container parser, sample-quality metrics and the
//! routine-level profiler.

mod dataset;
pub mod idx;
pub mod profile;
mod quality;

use thiserror::Error;

pub use dataset::{sample_dataset, DataStream, Dataset, DatasetSpec};
pub use idx::{encode_idx, parse_idx, IdxError, IdxTensor};
pub use profile::{speedup, ProfileReport, Profiler, Ratio, Routine, SpeedupReport};
pub use quality::{quality, QualityScore};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("sample count must be >= 1")]
    EmptySample,
    #[error("quality metric is not available for {0} datasets")]
    UnsupportedMetric(&'static str),
    #[error("samples must have {expected} columns, got {found}")]
    Width { expected: usize, found: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("speedup undefined: parallel time of {0} is zero")]
    UndefinedRatio(&'static str),
}
