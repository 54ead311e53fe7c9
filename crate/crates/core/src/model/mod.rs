//! Domain types and the exact vector fields of every noise model.

mod fields;
mod kernel;
mod noise;
mod state;

use serde::{Deserialize, Serialize};

pub use fields::{diffusion_common, diffusion_other, drift, ito_correction_common, Drift};
pub(crate) use fields::{alignment_into, diffusion_common_into, diffusion_other_into, ito_correction_common_into};
pub use kernel::{Kernel, KernelBounds, DEFAULT_SINGULAR_CAP};
pub use noise::{ChannelLayout, NoiseModel};
pub use state::{center_frame, FrameRecord, SystemState};
pub(crate) use state::row_mean;

use crate::error::{Error, Result};

/// Everything that defines the SDE being integrated.
///
/// `coupling_scale` multiplies the alignment sum. The common-noise system uses
/// 1; the classical `λ/N` normalisation is obtained by setting it explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: Kernel,
    pub noise: NoiseModel,
    pub coupling_scale: f64,
    pub n: usize,
    pub d: usize,
}

impl ModelConfig {
    pub fn new(kernel: Kernel, noise: NoiseModel, n: usize, d: usize) -> Self {
        ModelConfig {
            kernel,
            noise,
            coupling_scale: 1.0,
            n,
            d,
        }
    }

    pub fn with_coupling(mut self, coupling_scale: f64) -> Self {
        self.coupling_scale = coupling_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("need at least 2 particles, got {}", self.n)));
        }
        if self.d < 1 {
            return Err(Error::config("dimension must be >= 1"));
        }
        if !(self.coupling_scale.is_finite() && self.coupling_scale > 0.0) {
            return Err(Error::config(format!(
                "coupling_scale must be > 0 (got {})",
                self.coupling_scale
            )));
        }
        self.kernel.validate()?;
        self.noise.validate(self.d)
    }

    pub fn layout(&self) -> ChannelLayout {
        self.noise.layout(self.n, self.d)
    }
}
