use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSpec};
use crate::nn::Batch;

/// Mode-coverage diagnostics of a 2-D sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub modes_covered: usize,
    pub total_modes: usize,
    pub high_quality_ratio: f64,
    /// Total variation distance between the high-quality mode histogram and
    /// the uniform distribution over modes.
    pub tvd: f64,
}

impl QualityScore {
    /// Ordering key used to rank ensembles: more modes, then more
    /// high-quality samples, then lower TVD.
    pub fn rank_key(&self) -> (usize, f64, f64) {
        (self.modes_covered, self.high_quality_ratio, -self.tvd)
    }

    pub fn better_than(&self, other: &QualityScore) -> bool {
        let (a, b) = (self.rank_key(), other.rank_key());
        a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 > b.2)))
    }
}

/// A sample is high quality when it lies within three standard deviations
/// of its nearest mode. A mode counts as covered when it owns at least
/// `0.2 / modes` of all samples. With no high-quality samples the TVD is 1.
pub fn quality(samples: &Batch, spec: &DatasetSpec) -> Result<QualityScore, DataError> {
    let (centers, std) = match (spec.centers(), spec.mode_std()) {
        (Some(c), Some(s)) => (c, s),
        _ => return Err(DataError::UnsupportedMetric(spec.name())),
    };
    if samples.cols() != 2 {
        return Err(DataError::Width {
            expected: 2,
            found: samples.cols(),
        });
    }
    let k = centers.len();
    let n = samples.rows();
    let radius_sq = (3.0 * std) * (3.0 * std);
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let r = samples.row(i);
        let (x, y) = (f64::from(r[0]), f64::from(r[1]));
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, (x - c[0]).powi(2) + (y - c[1]).powi(2)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if d2 <= radius_sq {
            counts[best] += 1;
        }
    }
    let hq: usize = counts.iter().sum();
    let threshold = 0.2 / k as f64 * n as f64;
    let modes_covered = counts.iter().filter(|&&c| c > 0 && c as f64 >= threshold).count();
    let tvd = if hq == 0 {
        1.0
    } else {
        let u = 1.0 / k as f64;
        0.5 * counts.iter().map(|&c| (c as f64 / hq as f64 - u).abs()).sum::<f64>()
    };
    Ok(QualityScore {
        modes_covered,
        total_modes: k,
        high_quality_ratio: hq as f64 / n as f64,
        tvd: tvd.clamp(0.0, 1.0),
    })
}
