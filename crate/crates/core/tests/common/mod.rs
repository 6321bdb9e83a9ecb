#![allow(dead_code, unused_imports)]

use cellgan::config::{parse_config, Overrides, RunConfig};
use cellgan::nn::{Activation, MlpArch};

/// A fast planar-ring configuration with tiny networks.
pub fn small_config(grid: &str, iterations: usize, seed: u64) -> RunConfig {
    let o = Overrides {
        grid: Some(grid.into()),
        iterations: Some(iterations),
        batch_size: Some(16),
        seed: Some(seed),
        ..Overrides::default()
    };
    let mut cfg = parse_config(None, &o).unwrap();
    cfg.batches_per_epoch = 2;
    cfg.eval_samples = 200;
    cfg.heartbeat_interval_ms = 100;
    cfg.generator = Some(MlpArch::new(2, vec![8], 2, Activation::Tanh, Activation::Linear).unwrap());
    cfg.discriminator = Some(MlpArch::new(2, vec![8], 1, Activation::Tanh, Activation::Sigmoid).unwrap());
    cfg
}

pub mod fd;
pub mod marker;
pub mod topo;
pub mod proto;
