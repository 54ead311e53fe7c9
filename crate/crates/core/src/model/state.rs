use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions and velocities of `n` particles in `R^d` at time `t`.
///
/// Both arrays are stored row-major: particle `i` occupies `[i*d, (i+1)*d)`.
/// A state is only constructible with `n >= 2`, `d >= 1` and finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct SystemState {
    t: f64,
    n: usize,
    d: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    t: f64,
    positions: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

impl TryFrom<RawState> for SystemState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        SystemState::from_rows(raw.t, &raw.positions, &raw.velocities)
    }
}

impl From<SystemState> for RawState {
    fn from(s: SystemState) -> Self {
        RawState {
            t: s.t,
            positions: s.positions.chunks(s.d).map(<[f64]>::to_vec).collect(),
            velocities: s.velocities.chunks(s.d).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl SystemState {
    pub fn new(t: f64, n: usize, d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidState(format!("need at least 2 particles, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidState("dimension must be >= 1".into()));
        }
        if positions.len() != n * d || velocities.len() != n * d {
            return Err(Error::InvalidState(format!(
                "expected {n}x{d} positions and velocities, got {} and {} values",
                positions.len(),
                velocities.len()
            )));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("state time"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("positions"));
        }
        if velocities.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("velocities"));
        }
        Ok(SystemState {
            t,
            n,
            d,
            positions,
            velocities,
        })
    }

    /// Builds a state from one row per particle.
    pub fn from_rows(t: f64, positions: &[Vec<f64>], velocities: &[Vec<f64>]) -> Result<Self> {
        let n = positions.len();
        let d = positions.first().map_or(0, Vec::len);
        if velocities.len() != n
            || positions.iter().chain(velocities).any(|row| row.len() != d)
        {
            return Err(Error::InvalidState("ragged position/velocity rows".into()));
        }
        SystemState::new(t, n, d, positions.concat(), velocities.concat())
    }

    /// Trusted constructor for integrator output that has already been checked.
    pub(crate) fn from_parts(t: f64, n: usize, d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Self {
        debug_assert_eq!(positions.len(), n * d);
        debug_assert_eq!(velocities.len(), n * d);
        SystemState {
            t,
            n,
            d,
            positions,
            velocities,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    pub fn mean_position(&self) -> Vec<f64> {
        row_mean(&self.positions, self.n, self.d)
    }

    pub fn mean_velocity(&self) -> Vec<f64> {
        row_mean(&self.velocities, self.n, self.d)
    }

    /// Same particles with rows reordered so that new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::mismatch("permutation length"));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::mismatch("not a permutation"));
            }
        }
        let pick = |data: &[f64]| -> Vec<f64> {
            perm.iter()
                .flat_map(|&p| data[p * self.d..(p + 1) * self.d].iter().copied())
                .collect()
        };
        Ok(SystemState::from_parts(
            self.t,
            self.n,
            self.d,
            pick(&self.positions),
            pick(&self.velocities),
        ))
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

pub(crate) fn row_mean(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Means removed by [`center_frame`], referred back to `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub x_bar0: Vec<f64>,
    pub v_bar0: Vec<f64>,
}

impl FrameRecord {
    /// Maps a centered state back to the original frame:
    /// `x ↦ x + x̄0 + v̄0 t`, `v ↦ v + v̄0`.
    pub fn restore(&self, centered: &SystemState) -> Result<SystemState> {
        let d = centered.d;
        if self.x_bar0.len() != d || self.v_bar0.len() != d {
            return Err(Error::mismatch("frame record dimension"));
        }
        let t = centered.t;
        let mut positions = centered.positions.clone();
        let mut velocities = centered.velocities.clone();
        for row in positions.chunks_exact_mut(d) {
            for k in 0..d {
                row[k] += self.x_bar0[k] + self.v_bar0[k] * t;
            }
        }
        for row in velocities.chunks_exact_mut(d) {
            for k in 0..d {
                row[k] += self.v_bar0[k];
            }
        }
        SystemState::new(t, centered.n, d, positions, velocities)
    }
}

/// Removes the mean position and mean velocity.
///
/// The returned record stores `x̄(t) − v̄ t` and `v̄`, so that
/// [`FrameRecord::restore`] inverts the centering at this or any later time
/// of the centered trajectory.
pub fn center_frame(state: &SystemState) -> (SystemState, FrameRecord) {
    let (n, d) = (state.n, state.d);
    let x_bar = state.mean_position();
    let v_bar = state.mean_velocity();
    let mut positions = state.positions.clone();
    let mut velocities = state.velocities.clone();
    for row in positions.chunks_exact_mut(d) {
        row.iter_mut().zip(&x_bar).for_each(|(x, m)| *x -= m);
    }
    for row in velocities.chunks_exact_mut(d) {
        row.iter_mut().zip(&v_bar).for_each(|(v, m)| *v -= m);
    }
    let x_bar0 = x_bar
        .iter()
        .zip(&v_bar)
        .map(|(x, v)| x - v * state.t)
        .collect();
    (
        SystemState::from_parts(state.t, n, d, positions, velocities),
        FrameRecord { x_bar0, v_bar0: v_bar },
    )
}
