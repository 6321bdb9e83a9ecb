//! Adversarial losses over discriminator probabilities.
//!
//! All probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking
//! logarithms. Every loss is a batch mean, so each value is non-negative and
//! lower is better for the network being trained.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty {0} batch")]
    EmptyBatch(&'static str),
    #[error("non-finite discriminator output")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Original minmax objective with the log measuring function.
    Bce,
    /// Non-saturating generator objective; the discriminator side is BCE.
    Heuristic,
    LeastSquares,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Bce, LossKind::Heuristic, LossKind::LeastSquares];

    /// Round-robin assignment by cell index used when loss diversity is on.
    pub fn round_robin(index: usize) -> LossKind {
        Self::ALL[index % Self::ALL.len()]
    }
}

/// How loss functions are assigned to grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Every cell uses BCE.
    #[default]
    UniformBce,
    /// Cells cycle through [`LossKind::ALL`] in row-major order.
    MustangsRoundrobin,
}

impl LossMode {
    pub fn kind_for_cell(self, index: usize) -> LossKind {
        match self {
            LossMode::UniformBce => LossKind::Bce,
            LossMode::MustangsRoundrobin => LossKind::round_robin(index),
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-bce" => Ok(LossMode::UniformBce),
            "mustangs-roundrobin" => Ok(LossMode::MustangsRoundrobin),
            other => Err(format!("unknown loss mode {other:?} (expected uniform-bce or mustangs-roundrobin)")),
        }
    }
}

/// Which term of the objective a gradient is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    /// Discriminator loss on real samples.
    DiscriminatorReal,
    /// Discriminator loss on generated samples.
    DiscriminatorFake,
    /// Generator loss on generated samples.
    Generator,
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check(batch: &[f64], name: &'static str) -> Result<(), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch(name));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Per-sample loss of one term.
#[inline]
fn term_value(kind: LossKind, term: LossTerm, p: f64) -> f64 {
    match (kind, term) {
        (LossKind::Bce | LossKind::Heuristic, LossTerm::DiscriminatorReal) => -clamp(p).ln(),
        (LossKind::Bce | LossKind::Heuristic, LossTerm::DiscriminatorFake) => -(1.0 - clamp(p)).ln(),
        // ln(1 - p) shifted by -ln(PROB_EPS): same gradient as the minmax
        // objective, zero when the discriminator is fully fooled.
        (LossKind::Bce, LossTerm::Generator) => ((1.0 - clamp(p)).ln() - PROB_EPS.ln()).max(0.0),
        (LossKind::Heuristic, LossTerm::Generator) => -clamp(p).ln(),
        (LossKind::LeastSquares, LossTerm::DiscriminatorReal) => (p - 1.0).powi(2),
        (LossKind::LeastSquares, LossTerm::DiscriminatorFake) => p * p,
        (LossKind::LeastSquares, LossTerm::Generator) => (p - 1.0).powi(2),
    }
}

/// Derivative of [`term_value`] with respect to `p`, evaluated at the
/// clamped probability.
#[inline]
fn term_derivative(kind: LossKind, term: LossTerm, p: f64) -> f64 {
    match (kind, term) {
        (LossKind::Bce | LossKind::Heuristic, LossTerm::DiscriminatorReal) => -1.0 / clamp(p),
        (LossKind::Bce | LossKind::Heuristic, LossTerm::DiscriminatorFake) => 1.0 / (1.0 - clamp(p)),
        (LossKind::Bce, LossTerm::Generator) => -1.0 / (1.0 - clamp(p)),
        (LossKind::Heuristic, LossTerm::Generator) => -1.0 / clamp(p),
        (LossKind::LeastSquares, LossTerm::DiscriminatorReal) => 2.0 * (p - 1.0),
        (LossKind::LeastSquares, LossTerm::DiscriminatorFake) => 2.0 * p,
        (LossKind::LeastSquares, LossTerm::Generator) => 2.0 * (p - 1.0),
    }
}

/// Mean loss of a single term over a batch.
pub fn term_loss(kind: LossKind, term: LossTerm, outputs: &[f64]) -> Result<f64, LossError> {
    check(outputs, "discriminator output")?;
    Ok(mean(
        outputs.iter().map(|&p| term_value(kind, term, p)),
        outputs.len(),
    ))
}

pub fn discriminator_loss(kind: LossKind, d_on_real: &[f64], d_on_fake: &[f64]) -> Result<f64, LossError> {
    check(d_on_real, "real")?;
    check(d_on_fake, "fake")?;
    Ok(term_loss(kind, LossTerm::DiscriminatorReal, d_on_real)?
        + term_loss(kind, LossTerm::DiscriminatorFake, d_on_fake)?)
}

pub fn generator_loss(kind: LossKind, d_on_fake: &[f64]) -> Result<f64, LossError> {
    check(d_on_fake, "fake")?;
    term_loss(kind, LossTerm::Generator, d_on_fake)
}

/// Gradient of one loss term with respect to each discriminator output.
///
/// Entry `i` is the derivative of sample `i`'s own loss term; the batch mean
/// is applied by [`crate::nn::MlpParams::backward`], so for a batch of `n`
/// rows entry `i` equals `n * dL/dp_i`.
pub fn loss_gradient_at_output(kind: LossKind, term: LossTerm, outputs: &[f64]) -> Result<Vec<f64>, LossError> {
    check(outputs, "discriminator output")?;
    Ok(outputs.iter().map(|&p| term_derivative(kind, term, p)).collect())
}
