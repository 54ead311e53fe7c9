//! Time stepping for every noise model.
//!
//! The common-noise system is Stratonovich. [`StepScheme::EulerMaruyamaIto`]
//! integrates its exact Itô form (drift plus `½(Dg)g`);
//! [`StepScheme::EulerHeunStratonovich`] integrates the Stratonovich form
//! directly and serves as an independent cross-check. The independent-noise
//! models are Itô as written and always take a plain Euler-Maruyama step.

use serde::{Deserialize, Serialize};

use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{
    alignment_into, diffusion_common_into, diffusion_other_into, ito_correction_common_into, ModelConfig,
    NoiseModel, SystemState,
};
use crate::rng::{Purpose, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScheme {
    EulerMaruyamaIto,
    EulerHeunStratonovich,
    DeterministicEuler,
}

/// Scratch space reused across steps.
struct Workspace {
    dv: Vec<f64>,
    g: Vec<f64>,
    corr: Vec<f64>,
    v_pred: Vec<f64>,
    g_pred: Vec<f64>,
}

impl Workspace {
    fn new(len: usize) -> Self {
        Workspace {
            dv: vec![0.0; len],
            g: vec![0.0; len],
            corr: vec![0.0; len],
            v_pred: vec![0.0; len],
            g_pred: vec![0.0; len],
        }
    }
}

/// Advances `(x, v)` by one step in place. Returns `false` if the new state
/// is not finite.
#[allow(clippy::too_many_arguments)]
fn advance(
    config: &ModelConfig,
    scheme: StepScheme,
    ito_correction: bool,
    dt: f64,
    dw: &[f64],
    x: &mut [f64],
    v: &mut [f64],
    ws: &mut Workspace,
) -> bool {
    let (n, d) = (config.n, config.d);
    alignment_into(x, v, n, d, &config.kernel, config.coupling_scale, &mut ws.dv);

    for (xi, vi) in x.iter_mut().zip(v.iter()) {
        *xi += vi * dt;
    }

    let noise = if scheme == StepScheme::DeterministicEuler {
        &NoiseModel::None
    } else {
        &config.noise
    };
    match noise {
        NoiseModel::None => {
            for (vi, a) in v.iter_mut().zip(&ws.dv) {
                *vi += a * dt;
            }
        }
        NoiseModel::CommonStratonovich { sigma } => {
            let dw = dw[0];
            diffusion_common_into(v, n, d, *sigma, &mut ws.g);
            match scheme {
                StepScheme::EulerHeunStratonovich => {
                    for k in 0..v.len() {
                        ws.v_pred[k] = v[k] + ws.dv[k] * dt + ws.g[k] * dw;
                    }
                    diffusion_common_into(&ws.v_pred, n, d, *sigma, &mut ws.g_pred);
                    for k in 0..v.len() {
                        v[k] += ws.dv[k] * dt + 0.5 * (ws.g[k] + ws.g_pred[k]) * dw;
                    }
                }
                _ => {
                    if ito_correction {
                        ito_correction_common_into(v, n, d, *sigma, &mut ws.corr);
                    } else {
                        ws.corr.fill(0.0);
                    }
                    for k in 0..v.len() {
                        v[k] += (ws.dv[k] + ws.corr[k]) * dt + ws.g[k] * dw;
                    }
                }
            }
        }
        NoiseModel::AdditiveIndependent { .. } => {
            let _ = diffusion_other_into(v, d, noise, &mut ws.g);
            for k in 0..v.len() {
                v[k] += ws.dv[k] * dt + ws.g[k] * dw[k];
            }
        }
        NoiseModel::MultiplicativeVe { .. } => {
            let _ = diffusion_other_into(v, d, noise, &mut ws.g);
            for i in 0..n {
                for k in 0..d {
                    let idx = i * d + k;
                    v[idx] += ws.dv[idx] * dt + ws.g[idx] * dw[i];
                }
            }
        }
    }
    x.iter().chain(v.iter()).all(|z| z.is_finite())
}

fn uses_noise(config: &ModelConfig, scheme: StepScheme) -> bool {
    scheme != StepScheme::DeterministicEuler && config.layout().channels() > 0
}

/// One step from `state`. `dw` holds one increment per Wiener channel of the
/// noise model (ignored for the deterministic scheme).
pub fn step(
    state: &SystemState,
    config: &ModelConfig,
    scheme: StepScheme,
    dt: f64,
    dw: &[f64],
) -> Result<SystemState> {
    step_with(state, config, scheme, dt, dw, true)
}

/// [`step`] with the Itô correction optionally switched off. Only useful as a
/// negative control: without the correction the Euler-Maruyama scheme solves
/// a different SDE.
pub fn step_with(
    state: &SystemState,
    config: &ModelConfig,
    scheme: StepScheme,
    dt: f64,
    dw: &[f64],
    ito_correction: bool,
) -> Result<SystemState> {
    if state.n() != config.n || state.d() != config.d {
        return Err(Error::mismatch("state shape differs from model config"));
    }
    if uses_noise(config, scheme) && dw.len() != config.layout().channels() {
        return Err(Error::mismatch(format!(
            "expected {} Wiener increments, got {}",
            config.layout().channels(),
            dw.len()
        )));
    }
    let mut x = state.positions().to_vec();
    let mut v = state.velocities().to_vec();
    let mut ws = Workspace::new(x.len());
    if !advance(config, scheme, ito_correction, dt, dw, &mut x, &mut v, &mut ws) {
        return Err(Error::BlowUp {
            step: 1,
            time: state.t() + dt,
        });
    }
    Ok(SystemState::from_parts(state.t() + dt, config.n, config.d, x, v))
}

/// Time of step `k`. When `1/dt` is a whole number the division form is used,
/// so that e.g. step 300 of `dt = 1e-4` is exactly `0.03`.
pub fn grid_time(k: usize, dt: f64) -> f64 {
    let per_unit = 1.0 / dt;
    let m = per_unit.round();
    if m >= 1.0 && (per_unit - m).abs() <= 1e-9 * m {
        k as f64 / m
    } else {
        k as f64 * dt
    }
}

/// Which steps are recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGrid {
    /// Every `k`-th step, plus the final step.
    Every(usize),
    /// Explicit times; each must lie on the step grid.
    Times(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub horizon: f64,
    pub output: OutputGrid,
    /// Keep a full state per output sample.
    #[serde(default = "yes")]
    pub keep_snapshots: bool,
    /// Include `½(Dg)g` in the Euler-Maruyama drift. Disable only for negative controls.
    #[serde(default = "yes")]
    pub ito_correction: bool,
}

fn yes() -> bool {
    true
}

impl RunSettings {
    pub fn new(dt: f64, horizon: f64, output: OutputGrid) -> Self {
        RunSettings {
            dt,
            horizon,
            output,
            keep_snapshots: true,
            ito_correction: true,
        }
    }

    pub fn without_snapshots(mut self) -> Self {
        self.keep_snapshots = false;
        self
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be > 0 (got {})", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(format!("horizon must be > 0 (got {})", self.horizon)));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::config(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Step indices of the output samples, strictly increasing, starting at 0.
    pub fn output_steps(&self) -> Result<Vec<usize>> {
        let steps = self.steps()?;
        let mut out = vec![0];
        match &self.output {
            OutputGrid::Every(k) => {
                if *k == 0 {
                    return Err(Error::config("output stride must be >= 1"));
                }
                out.extend((1..=steps / k).map(|j| j * k));
                if *out.last().unwrap() != steps {
                    out.push(steps);
                }
            }
            OutputGrid::Times(times) => {
                for &t in times {
                    let pos = t / self.dt;
                    let k = pos.round();
                    if !t.is_finite() || t < 0.0 || (pos - k).abs() > 1e-6 * pos.max(1.0) || k as usize > steps {
                        return Err(Error::config(format!("output time {t} is not on the step grid")));
                    }
                    let k = k as usize;
                    if k == 0 {
                        continue;
                    }
                    if k <= *out.last().unwrap() {
                        return Err(Error::config("output times must be strictly increasing"));
                    }
                    out.push(k);
                }
            }
        }
        Ok(out)
    }
}

/// Scalar diagnostics per output sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `|v − v̄|²` summed over particles.
    pub v2_centered: Vec<f64>,
    /// `Σ_{i<j} |v_i − v_j|²`
    pub dispersion: Vec<f64>,
    pub max_pair_dist: Vec<f64>,
    pub mean_pair_dist: Vec<f64>,
    /// `|x − x̄|`
    pub x_centered_norm: Vec<f64>,
    /// Cumulative Wiener value of channel 0 (0 without noise).
    pub w: Vec<f64>,
}

impl Diagnostics {
    fn record(&mut self, state: &SystemState, w: f64) {
        let (max_pair, mean_pair) = metrics::position_spread(state);
        self.v2_centered.push(metrics::centered_speed_norm2(state));
        self.dispersion.push(metrics::velocity_dispersion(state));
        self.max_pair_dist.push(max_pair);
        self.mean_pair_dist.push(mean_pair);
        self.x_centered_norm.push(metrics::centered_position_norm(state));
        self.w.push(w);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    /// Empty unless snapshots were requested.
    pub snapshots: Vec<SystemState>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Source of Wiener increments, one step at a time.
trait NoiseFeed {
    fn increments(&mut self, step: usize) -> Result<&[f64]>;
}

struct Silent;

impl NoiseFeed for Silent {
    fn increments(&mut self, _step: usize) -> Result<&[f64]> {
        Ok(&[])
    }
}

struct FromPath<'a>(&'a BrownianPath);

impl NoiseFeed for FromPath<'_> {
    fn increments(&mut self, step: usize) -> Result<&[f64]> {
        Ok(self.0.step(step))
    }
}

/// Generates the path in fixed-size windows so memory stays bounded.
struct Streamed {
    key: StreamKey,
    config: ModelConfig,
    dt: f64,
    total: usize,
    window: Option<(usize, BrownianPath)>,
}

const STREAM_WINDOW: usize = 1 << 14;

impl NoiseFeed for Streamed {
    fn increments(&mut self, step: usize) -> Result<&[f64]> {
        let stale = match &self.window {
            Some((start, path)) => step < *start || step >= start + path.steps(),
            None => true,
        };
        if stale {
            let start = step - step % STREAM_WINDOW;
            let len = STREAM_WINDOW.min(self.total - start);
            let path = BrownianPath::generate_window(self.key, self.dt, start, len, self.config.layout())?;
            self.window = Some((start, path));
        }
        let (start, path) = self.window.as_ref().unwrap();
        Ok(path.step(step - start))
    }
}

fn drive(
    config: &ModelConfig,
    init: &SystemState,
    scheme: StepScheme,
    settings: &RunSettings,
    feed: &mut dyn NoiseFeed,
) -> Result<Trajectory> {
    config.validate()?;
    if init.n() != config.n || init.d() != config.d {
        return Err(Error::mismatch(format!(
            "initial state is {}x{}, config is {}x{}",
            init.n(),
            init.d(),
            config.n,
            config.d
        )));
    }
    let output = settings.output_steps()?;
    let total = *output.last().unwrap();
    let (n, d, dt, t0) = (config.n, config.d, settings.dt, init.t());
    let noisy = uses_noise(config, scheme);

    let mut x = init.positions().to_vec();
    let mut v = init.velocities().to_vec();
    let mut ws = Workspace::new(x.len());
    let mut w = 0.0;
    let mut traj = Trajectory {
        times: Vec::with_capacity(output.len()),
        steps: Vec::with_capacity(output.len()),
        snapshots: Vec::new(),
        diagnostics: Diagnostics::default(),
    };
    let sample = |traj: &mut Trajectory, k: usize, x: &[f64], v: &[f64], w: f64| {
        let t = t0 + grid_time(k, dt);
        let state = SystemState::from_parts(t, n, d, x.to_vec(), v.to_vec());
        traj.times.push(t);
        traj.steps.push(k);
        traj.diagnostics.record(&state, w);
        if settings.keep_snapshots {
            traj.snapshots.push(state);
        }
    };

    sample(&mut traj, 0, &x, &v, w);
    let mut next = 1;
    for k in 0..total {
        let dw: &[f64] = if noisy { feed.increments(k)? } else { &[] };
        if let Some(first) = dw.first() {
            w += first;
        }
        if !advance(config, scheme, settings.ito_correction, dt, dw, &mut x, &mut v, &mut ws) {
            return Err(Error::BlowUp {
                step: k + 1,
                time: t0 + grid_time(k + 1, dt),
            });
        }
        if output[next] == k + 1 {
            sample(&mut traj, k + 1, &x, &v, w);
            next += 1;
        }
    }
    Ok(traj)
}

/// Integrates from `init` with the trial-0 noise stream of `seed`.
pub fn simulate(
    config: &ModelConfig,
    init: &SystemState,
    scheme: StepScheme,
    settings: &RunSettings,
    seed: u64,
) -> Result<Trajectory> {
    simulate_with_key(config, init, scheme, settings, StreamKey::new(seed, 0, Purpose::Noise))
}

/// Integrates with the noise stream identified by `key`.
pub fn simulate_with_key(
    config: &ModelConfig,
    init: &SystemState,
    scheme: StepScheme,
    settings: &RunSettings,
    key: StreamKey,
) -> Result<Trajectory> {
    if !uses_noise(config, scheme) {
        return drive(config, init, scheme, settings, &mut Silent);
    }
    let mut feed = Streamed {
        key,
        config: config.clone(),
        dt: settings.dt,
        total: settings.steps()?,
        window: None,
    };
    drive(config, init, scheme, settings, &mut feed)
}

/// Integrates along an explicit path, so that closed-form oracles can be
/// evaluated on the very same `w_t`.
pub fn simulate_on_path(
    config: &ModelConfig,
    init: &SystemState,
    scheme: StepScheme,
    settings: &RunSettings,
    path: &BrownianPath,
) -> Result<Trajectory> {
    if uses_noise(config, scheme) {
        if path.layout() != config.layout() {
            return Err(Error::mismatch("path channel layout differs from the noise model"));
        }
        if path.dt() != settings.dt {
            return Err(Error::mismatch(format!(
                "path step {} differs from run step {}",
                path.dt(),
                settings.dt
            )));
        }
        if path.steps() < settings.steps()? {
            return Err(Error::mismatch("path is shorter than the run horizon"));
        }
    }
    drive(config, init, scheme, settings, &mut FromPath(path))
}
