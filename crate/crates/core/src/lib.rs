//! Stochastic Cucker-Smale flocking under common multiplicative noise:
//! model, integrators, metrics, closed-form oracles and a reproducible
//! Monte Carlo engine.

pub mod brownian;
pub mod ensemble;
pub mod error;
pub mod integrators;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod rng;

pub use brownian::{make_brownian_path, BrownianPath};
pub use ensemble::{run_ensemble, sample_initial, EnsembleConfig, EnsembleResult, InitSpec};
pub use error::{Error, Result};
pub use integrators::{simulate, simulate_on_path, step, OutputGrid, RunSettings, StepScheme, Trajectory};
pub use metrics::{classify_flocking, Criterion, FlockingVerdict};
pub use model::{ChannelLayout, Kernel, KernelBounds, ModelConfig, NoiseModel, SystemState};
pub use oracles::{thresholds, Regime, TheoryBound, Thresholds};
pub use rng::{Purpose, StreamKey};
