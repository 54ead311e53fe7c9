//! Reconstructed figure setups. The source gives the model parameters but not
//! the step size or sampling grid; those are ours.

use clap::ValueEnum;
use flocking_core::ensemble::{EnsembleConfig, InitSpec};
use flocking_core::{Kernel, ModelConfig, NoiseModel, OutputGrid};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Non-flocking: N=50, d=2, σ=0.3, ψ(s)=1/(1+s²)^0.25, 100 trials to T=0.2
    Fig1,
    /// Flocking: N=50, d=3, σ=0.05, ψ≡1, snapshots at 0, 0.02, 0.5, 1
    Fig2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
        }
    }

    pub fn config(self) -> EnsembleConfig {
        match self {
            Preset::Fig1 => fig1(),
            Preset::Fig2 => fig2(),
        }
    }
}

pub const DEFAULT_SEED: u64 = 0;

pub fn fig1() -> EnsembleConfig {
    let model = ModelConfig::new(Kernel::rational(1.0, 1.0, 0.25), NoiseModel::common(0.3), 50, 2);
    EnsembleConfig::new(model, 1e-4, 0.2, OutputGrid::Every(100), 100, DEFAULT_SEED, InitSpec::cube(2, 0.0, 0.1))
}

pub fn fig2() -> EnsembleConfig {
    let model = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(0.05), 50, 3);
    let mut cfg = EnsembleConfig::new(model, 1e-3, 1.0, OutputGrid::Every(10), 20, DEFAULT_SEED, InitSpec::cube(3, 0.0, 1.0));
    cfg.snapshot_times = vec![0.0, 0.02, 0.5, 1.0];
    cfg
}

/// Used when neither `--config` nor `--preset` is given.
pub fn desk() -> EnsembleConfig {
    let model = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(0.1), 5, 2);
    EnsembleConfig::new(model, 1e-3, 1.0, OutputGrid::Every(10), 100, DEFAULT_SEED, InitSpec::cube(2, 0.0, 1.0))
}
