use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How white noise enters the velocity equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Deterministic Cucker-Smale.
    None,
    /// `σ Σ_j (v_j − v_i) ∘ dw_t`: one scalar Wiener process shared by every
    /// particle, in the Stratonovich sense.
    CommonStratonovich { sigma: f64 },
    /// `√D dw_i` with `w_i` an independent d-dimensional Wiener process per particle (Itô).
    AdditiveIndependent { diffusion: f64 },
    /// `D (v_i − v_e) dw_i` with `w_i` an independent scalar Wiener process per
    /// particle multiplying the whole vector (Itô).
    MultiplicativeVe { diffusion: f64, v_e: Vec<f64> },
}

/// Which Wiener channels a noise model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    /// No noise; zero channels.
    Empty,
    /// One channel shared by all particles.
    Common,
    /// `n * d` channels, particle-major.
    PerComponent { n: usize, d: usize },
    /// `n` channels, one per particle.
    PerParticle { n: usize },
}

impl ChannelLayout {
    pub fn channels(&self) -> usize {
        match *self {
            ChannelLayout::Empty => 0,
            ChannelLayout::Common => 1,
            ChannelLayout::PerComponent { n, d } => n * d,
            ChannelLayout::PerParticle { n } => n,
        }
    }
}

impl NoiseModel {
    pub fn common(sigma: f64) -> Self {
        NoiseModel::CommonStratonovich { sigma }
    }

    pub fn layout(&self, n: usize, d: usize) -> ChannelLayout {
        match self {
            NoiseModel::None => ChannelLayout::Empty,
            NoiseModel::CommonStratonovich { .. } => ChannelLayout::Common,
            NoiseModel::AdditiveIndependent { .. } => ChannelLayout::PerComponent { n, d },
            NoiseModel::MultiplicativeVe { .. } => ChannelLayout::PerParticle { n },
        }
    }

    /// `σ` of the common model, `None` otherwise.
    pub fn common_sigma(&self) -> Option<f64> {
        match *self {
            NoiseModel::CommonStratonovich { sigma } => Some(sigma),
            _ => None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::CommonStratonovich { sigma } if positive(*sigma) => Ok(()),
            NoiseModel::CommonStratonovich { sigma } => {
                Err(Error::config(format!("sigma must be > 0 (got {sigma})")))
            }
            NoiseModel::AdditiveIndependent { diffusion } if positive(*diffusion) => Ok(()),
            NoiseModel::MultiplicativeVe { diffusion, v_e } if positive(*diffusion) => {
                if v_e.len() != d {
                    return Err(Error::config(format!(
                        "v_e has {} components, dimension is {d}",
                        v_e.len()
                    )));
                }
                if v_e.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("v_e"));
                }
                Ok(())
            }
            NoiseModel::AdditiveIndependent { diffusion }
            | NoiseModel::MultiplicativeVe { diffusion, .. } => {
                Err(Error::config(format!("D must be > 0 (got {diffusion})")))
            }
        }
    }
}
