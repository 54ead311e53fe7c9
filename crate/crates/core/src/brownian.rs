//! Reproducible Wiener increments with exact dyadic refinement.
//!
//! A step size is written `dt = r · 2^-L` with `r ∈ [1, 2)`. The level-0
//! increments over `[k r, (k+1) r)` are drawn directly; every finer level is a
//! Brownian-bridge split of its parent, `a = c/2 + y`, `b = c − a` with
//! `y ~ N(0, dt_parent / 4)`. All values are rounded to a power-of-two grid
//! fine enough to be invisible at `f64` precision but coarse enough that
//! `a + b == c` holds exactly. Consequently the path at `dt/2` sums pairwise to
//! the path at `dt`, bit for bit, for the same key.
//!
//! Step sizes at or above 2 are produced by summing consecutive level-0
//! increments, which preserves the same relation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChannelLayout;
use crate::rng::{Purpose, StreamKey};

/// Largest supported step size.
pub const MAX_DT: f64 = 256.0;

const MAX_VALUES: usize = isize::MAX as usize / std::mem::size_of::<f64>();

/// `2^-44 · 2^-floor(level/2)`: every level-`ℓ` value is a multiple of this.
fn quantum(level: u32) -> f64 {
    f64::powi(2.0, -44 - (level / 2) as i32)
}

#[inline]
fn snap(x: f64, q: f64) -> f64 {
    (x / q).round() * q
}

fn shr_floor(x: u64, shift: u32) -> u64 {
    if shift >= 64 {
        0
    } else {
        x >> shift
    }
}

fn shr_ceil(x: u64, shift: u32) -> u64 {
    if shift >= 64 {
        u64::from(x > 0)
    } else {
        let q = x >> shift;
        if q << shift == x {
            q
        } else {
            q + 1
        }
    }
}

/// `dt = r · 2^-level`, `r ∈ [1, 2)`. Exact, since only powers of two are applied.
fn decompose(dt: f64) -> (f64, i32) {
    let mut r = dt;
    let mut level = 0;
    while r < 1.0 {
        r *= 2.0;
        level += 1;
    }
    while r >= 2.0 {
        r *= 0.5;
        level -= 1;
    }
    (r, level)
}

/// Increments of one channel over steps `[start, start + count)`.
fn channel_window(key: &StreamKey, channel: u64, dt: f64, start: u64, count: u64) -> Vec<f64> {
    let (r, level) = decompose(dt);
    let end = start + count;
    if level < 0 {
        let m = 1u64 << (-level) as u32;
        let mut stream = key.stream_at(channel, 0, start * m);
        let q = quantum(0);
        let sd = r.sqrt();
        return (0..count)
            .map(|_| (0..m).map(|_| snap(stream.normal() * sd, q)).sum())
            .collect();
    }
    let top = level as u32;
    let lo0 = shr_floor(start, top);
    let hi0 = shr_ceil(end, top);
    let mut stream = key.stream_at(channel, 0, lo0);
    let q0 = quantum(0);
    let sd0 = r.sqrt();
    let mut values: Vec<f64> = (lo0..hi0).map(|_| snap(stream.normal() * sd0, q0)).collect();
    let mut lo_prev = lo0;
    for lev in 1..=top {
        let lo = shr_floor(start, top - lev);
        let hi = shr_ceil(end, top - lev);
        let parent_dt = r * f64::powi(2.0, -(lev as i32 - 1));
        let sd = 0.5 * parent_dt.sqrt();
        let q = quantum(lev);
        let mut stream = key.stream_at(channel, u64::from(lev), lo_prev);
        let mut next = Vec::with_capacity((hi - lo) as usize);
        for (offset, &c) in values.iter().enumerate() {
            let parent = lo_prev + offset as u64;
            let a = snap(0.5 * c + stream.normal() * sd, q);
            let b = c - a;
            for (child, value) in [(2 * parent, a), (2 * parent + 1, b)] {
                if (lo..hi).contains(&child) {
                    next.push(value);
                }
            }
        }
        values = next;
        lo_prev = lo;
    }
    values
}

/// Wiener increments for a fixed step size, stored step-major
/// (`increments[step * channels + channel]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    dt: f64,
    steps: usize,
    layout: ChannelLayout,
    key: Option<StreamKey>,
    increments: Vec<f64>,
}

fn check_request(dt: f64, steps: usize, channels: usize) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be a positive finite number (got {dt})")));
    }
    if dt > MAX_DT {
        return Err(Error::config(format!("dt = {dt} exceeds the supported maximum {MAX_DT}")));
    }
    if steps == 0 {
        return Err(Error::config("a brownian path needs at least one step"));
    }
    match steps.checked_mul(channels) {
        Some(total) if total <= MAX_VALUES => Ok(()),
        _ => Err(Error::PathTooLarge { steps, channels }),
    }
}

impl BrownianPath {
    /// Path for the given stream key.
    pub fn generate(key: StreamKey, dt: f64, steps: usize, layout: ChannelLayout) -> Result<Self> {
        Self::generate_window(key, dt, 0, steps, layout)
    }

    /// Steps `[start, start + steps)` of the path [`BrownianPath::generate`]
    /// would produce for the same key and step size. Lets long horizons be
    /// streamed in bounded memory.
    pub fn generate_window(
        key: StreamKey,
        dt: f64,
        start: usize,
        steps: usize,
        layout: ChannelLayout,
    ) -> Result<Self> {
        let channels = layout.channels();
        check_request(dt, steps, channels)?;
        if start.checked_add(steps).is_none() {
            return Err(Error::PathTooLarge { steps, channels });
        }
        let mut increments = vec![0.0; steps * channels];
        for ch in 0..channels {
            let column = channel_window(&key, ch as u64, dt, start as u64, steps as u64);
            for (step, value) in column.into_iter().enumerate() {
                increments[step * channels + ch] = value;
            }
        }
        Ok(BrownianPath {
            dt,
            steps,
            layout,
            key: Some(key),
            increments,
        })
    }

    /// Wraps explicit increments, e.g. a deterministic test path.
    pub fn from_increments(dt: f64, layout: ChannelLayout, increments: Vec<f64>) -> Result<Self> {
        let channels = layout.channels();
        if channels == 0 {
            return Err(Error::config("explicit increments need at least one channel"));
        }
        if increments.len() % channels != 0 {
            return Err(Error::mismatch(format!(
                "{} increments do not divide into {channels} channels",
                increments.len()
            )));
        }
        let steps = increments.len() / channels;
        check_request(dt, steps, channels)?;
        if increments.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("brownian increments"));
        }
        Ok(BrownianPath {
            dt,
            steps,
            layout,
            key: None,
            increments,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn key(&self) -> Option<StreamKey> {
        self.key
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// All channel increments of one step.
    pub fn step(&self, step: usize) -> &[f64] {
        let c = self.channels();
        &self.increments[step * c..(step + 1) * c]
    }

    pub fn channel_increments(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        let c = self.channels();
        self.increments.iter().skip(channel).step_by(c.max(1)).copied()
    }

    /// `w` at the step grid `0, dt, …, steps·dt`, starting from `w_0 = 0`.
    pub fn cumulative(&self, channel: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.steps + 1);
        let mut acc = 0.0;
        w.push(acc);
        for inc in self.channel_increments(channel) {
            acc += inc;
            w.push(acc);
        }
        w
    }

    /// `w_t` at arbitrary times within the horizon, linearly interpolated
    /// between grid points (exact on the grid).
    pub fn values_at(&self, channel: usize, times: &[f64]) -> Result<Vec<f64>> {
        if channel >= self.channels() {
            return Err(Error::mismatch(format!("channel {channel} out of range")));
        }
        let w = self.cumulative(channel);
        times.iter().map(|&t| interpolate(&w, self.dt, t)).collect()
    }
}

/// Linear interpolation of a grid function `f(k dt)` at `t`.
pub(crate) fn interpolate(grid: &[f64], dt: f64, t: f64) -> Result<f64> {
    let last = (grid.len() - 1) as f64;
    let pos = t / dt;
    if !(t.is_finite() && t >= 0.0) || pos > last * (1.0 + 1e-12) + 1e-9 {
        return Err(Error::config(format!(
            "time {t} outside the path horizon {}",
            last * dt
        )));
    }
    let rounded = pos.round();
    if (pos - rounded).abs() <= 1e-9 * pos.max(1.0) {
        return Ok(grid[(rounded as usize).min(grid.len() - 1)]);
    }
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    Ok(grid[k] + frac * (grid[k + 1] - grid[k]))
}

/// Path for `seed` using the trial-0 noise stream.
pub fn make_brownian_path(seed: u64, dt: f64, steps: usize, layout: ChannelLayout) -> Result<BrownianPath> {
    BrownianPath::generate(StreamKey::new(seed, 0, Purpose::Noise), dt, steps, layout)
}
