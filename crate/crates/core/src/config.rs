//! Run configuration: a JSON file merged with command-line overrides.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coevolution::TrainConfig;
use crate::data::DatasetSpec;
use crate::grid::GridSpec;
use crate::losses::LossMode;
use crate::nn::{Activation, MlpArch};
use crate::orchestrator::{FailurePolicy, HeartbeatConfig, JobConfig, MasterOptions};
use crate::transport::TcpOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("config must be a JSON object")]
    NotAnObject,
    #[error("`{key}`: {reason}")]
    Key { key: String, reason: String },
}

fn key_err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport {other:?} (expected inproc or tcp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Master and all workers in this process.
    #[default]
    Auto,
    Master,
    Worker,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Role::Auto),
            "master" => Ok(Role::Master),
            "worker" => Ok(Role::Worker),
            other => Err(format!("unknown role {other:?} (expected master, worker or auto)")),
        }
    }
}

/// Dataset names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Ring,
    Grid25,
    Mnist,
}

impl FromStr for DatasetChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(DatasetChoice::Ring),
            "grid25" => Ok(DatasetChoice::Grid25),
            "mnist" => Ok(DatasetChoice::Mnist),
            other => Err(format!("unknown dataset {other:?} (expected ring, grid25 or mnist)")),
        }
    }
}

/// Every setting of a run. Unset keys in a config file take these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub iterations: usize,
    pub batch_size: usize,
    /// Gradient steps per epoch.
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    pub tournament_size: usize,
    pub population_per_cell: usize,
    pub mixture_sigma: f64,
    /// Scale of the additive learning-rate mutation.
    pub lr_sigma: f64,
    pub mutation_prob: f64,
    pub skip_disc_steps: usize,
    pub dataset: DatasetSpec,
    /// Defaults depend on the dataset; see [`RunConfig::generator_arch`].
    pub generator: Option<MlpArch>,
    pub discriminator: Option<MlpArch>,
    pub loss_mode: LossMode,
    pub transport: TransportKind,
    pub role: Role,
    /// Rank of this process when `role` is `worker`.
    pub rank: Option<usize>,
    pub host: String,
    pub base_port: u16,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_misses: u32,
    pub handshake_timeout_ms: u64,
    pub failure_policy: FailurePolicy,
    pub deterministic: bool,
    /// Samples per ensemble when ranking cells.
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let hb = HeartbeatConfig::default();
        Self {
            grid: GridSpec::square(2).expect("2x2 grid"),
            iterations: t.iterations,
            batch_size: t.batch_size,
            batches_per_epoch: t.batches_per_epoch,
            learning_rate: t.learning_rate,
            tournament_size: t.tournament_size,
            population_per_cell: t.population_per_cell,
            mixture_sigma: t.mixture_sigma,
            lr_sigma: t.lr_sigma,
            mutation_prob: t.mutation_prob,
            skip_disc_steps: t.skip_disc_steps,
            dataset: DatasetSpec::ring(),
            generator: None,
            discriminator: None,
            loss_mode: LossMode::UniformBce,
            transport: TransportKind::Inproc,
            role: Role::Auto,
            rank: None,
            host: "127.0.0.1".into(),
            base_port: 47000,
            seed: t.seed,
            output_dir: PathBuf::from("cellgan-out"),
            heartbeat_interval_ms: hb.interval.as_millis() as u64,
            heartbeat_misses: hb.misses,
            handshake_timeout_ms: 30_000,
            failure_policy: FailurePolicy::Continue,
            deterministic: false,
            eval_samples: 1000,
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub grid: Option<String>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub dataset: Option<DatasetChoice>,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub loss_mode: Option<LossMode>,
    pub transport: Option<TransportKind>,
    pub role: Option<Role>,
    pub rank: Option<usize>,
    pub base_port: Option<u16>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub failure_policy: Option<FailurePolicy>,
}

/// Parses a config file (empty means all defaults), applies `overrides` and
/// validates the result. Errors name the offending key.
pub fn parse_config(file: Option<&[u8]>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = match file {
        Some(bytes) if !bytes.iter().all(u8::is_ascii_whitespace) => parse_json(bytes)?,
        _ => RunConfig::default(),
    };
    cfg.apply(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_json(bytes: &[u8]) -> Result<RunConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let obj = value.as_object().ok_or(ConfigError::NotAnObject)?;
    // Check keys one at a time so that errors can name them.
    for (k, v) in obj {
        let single = serde_json::Value::Object(serde_json::Map::from_iter([(k.clone(), v.clone())]));
        if let Err(e) = serde_json::from_value::<RunConfig>(single) {
            return Err(key_err(k, e.to_string()));
        }
    }
    serde_json::from_value(value).map_err(|e| ConfigError::Syntax(e.to_string()))
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(g) = &o.grid {
            self.grid = g.parse().map_err(|e: crate::grid::GridError| key_err("grid", e.to_string()))?;
        }
        if let Some(v) = o.iterations {
            self.iterations = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        match o.dataset {
            Some(DatasetChoice::Ring) => self.dataset = DatasetSpec::ring(),
            Some(DatasetChoice::Grid25) => self.dataset = DatasetSpec::grid25(),
            Some(DatasetChoice::Mnist) => {
                let images = o
                    .mnist_images
                    .clone()
                    .or_else(|| match &self.dataset {
                        DatasetSpec::MnistIdx { images, .. } => Some(images.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| key_err("dataset", "mnist needs --mnist-images"))?;
                self.dataset = DatasetSpec::mnist(images, o.mnist_labels.clone());
            }
            None => {
                if let DatasetSpec::MnistIdx { images, labels } = &mut self.dataset {
                    if let Some(p) = &o.mnist_images {
                        *images = p.clone();
                    }
                    if let Some(p) = &o.mnist_labels {
                        *labels = Some(p.clone());
                    }
                }
            }
        }
        if let Some(v) = o.loss_mode {
            self.loss_mode = v;
        }
        if let Some(v) = o.transport {
            self.transport = v;
        }
        if let Some(v) = o.role {
            self.role = v;
        }
        if o.rank.is_some() {
            self.rank = o.rank;
        }
        if let Some(v) = o.base_port {
            self.base_port = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if o.deterministic {
            self.deterministic = true;
        }
        if let Some(v) = o.failure_policy {
            self.failure_policy = v;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            batches_per_epoch: self.batches_per_epoch,
            tournament_size: self.tournament_size,
            population_per_cell: self.population_per_cell,
            learning_rate: self.learning_rate,
            mixture_sigma: self.mixture_sigma,
            lr_sigma: self.lr_sigma,
            mutation_prob: self.mutation_prob,
            skip_disc_steps: self.skip_disc_steps,
            seed: self.seed,
        }
    }

    /// Explicit architecture, or 64 -> 256 -> 256 -> 784 for images and
    /// 2 -> 32 -> 32 -> 2 for planar data.
    pub fn generator_arch(&self) -> MlpArch {
        self.generator.clone().unwrap_or_else(|| match self.dataset {
            DatasetSpec::MnistIdx { .. } => MlpArch::generator_default(),
            _ => MlpArch {
                input_dim: 2,
                hidden_layers: vec![32, 32],
                output_dim: 2,
                hidden_activation: Activation::Tanh,
                output_activation: Activation::Linear,
            },
        })
    }

    pub fn discriminator_arch(&self) -> MlpArch {
        self.discriminator.clone().unwrap_or_else(|| match self.dataset {
            DatasetSpec::MnistIdx { .. } => MlpArch::discriminator_default(),
            _ => MlpArch {
                input_dim: 2,
                hidden_layers: vec![32, 32],
                output_dim: 1,
                hidden_activation: Activation::Tanh,
                output_activation: Activation::Sigmoid,
            },
        })
    }

    pub fn heartbeat(&self) -> HeartbeatConfig {
        HeartbeatConfig {
            interval: Duration::from_millis(self.heartbeat_interval_ms),
            misses: self.heartbeat_misses,
        }
    }

    pub fn job(&self) -> JobConfig {
        JobConfig {
            grid: self.grid,
            train: self.train_config(),
            dataset: self.dataset.clone(),
            generator: self.generator_arch(),
            discriminator: self.discriminator_arch(),
            loss_mode: self.loss_mode,
            deterministic: self.deterministic,
            eval_samples: self.eval_samples,
        }
    }

    pub fn master_options(&self) -> MasterOptions {
        MasterOptions {
            heartbeat: self.heartbeat(),
            failure_policy: self.failure_policy,
            handshake_timeout: Duration::from_millis(self.handshake_timeout_ms),
            nodes: None,
        }
    }

    pub fn tcp_options(&self) -> Result<TcpOptions, ConfigError> {
        Ok(TcpOptions {
            host: self.host.parse().map_err(|e| key_err("host", format!("{e}")))?,
            base_port: self.base_port,
            connect_timeout: Duration::from_millis(self.handshake_timeout_ms),
        })
    }

    /// Master plus one worker per cell.
    pub fn world_size(&self) -> usize {
        self.grid.cell_count() + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("tournament_size", self.tournament_size),
            ("eval_samples", self.eval_samples),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(key_err(k, "must be >= 1"));
            }
        }
        if self.population_per_cell != 1 {
            return Err(key_err("population_per_cell", "only 1 individual per cell is supported"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(key_err("learning_rate", "must be in (0, 1)"));
        }
        if !(self.mixture_sigma >= 0.0 && self.mixture_sigma.is_finite()) {
            return Err(key_err("mixture_sigma", "must be finite and >= 0"));
        }
        if !(self.lr_sigma >= 0.0 && self.lr_sigma.is_finite()) {
            return Err(key_err("lr_sigma", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(key_err("mutation_prob", "must be in [0, 1]"));
        }
        if self.heartbeat_interval_ms == 0 {
            return Err(key_err("heartbeat_interval_ms", "must be >= 1"));
        }
        if self.heartbeat_misses < 2 {
            return Err(key_err("heartbeat_misses", "must be >= 2 so the timeout exceeds one interval"));
        }
        if self.base_port as usize + self.world_size() > u16::MAX as usize + 1 {
            return Err(key_err("base_port", "ports for every rank must fit below 65536"));
        }
        self.host
            .parse::<std::net::IpAddr>()
            .map_err(|e| key_err("host", e.to_string()))?;
        if self.role == Role::Worker {
            match self.rank {
                None => return Err(key_err("rank", "a worker needs a rank")),
                Some(r) if r == 0 || r >= self.world_size() => {
                    return Err(key_err("rank", format!("must be in 1..{}", self.world_size())))
                }
                _ => {}
            }
        }
        if self.role != Role::Auto && self.transport == TransportKind::Inproc {
            return Err(key_err("role", "master and worker roles need the tcp transport"));
        }
        let job = self.job();
        job.validate().map_err(|e| {
            let key = if e.to_string().contains("generator") || e.to_string().contains("discriminator") {
                "generator"
            } else {
                "dataset"
            };
            key_err(key, e.to_string())
        })?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
