//! Monte Carlo over independent trajectories.
//!
//! Trial `k` draws its initial state from the `(base_seed, k, Init)` stream and
//! its Wiener increments from `(base_seed, k, Noise)`. Trials run on a rayon
//! pool; the results are collected in trial order and reduced sequentially,
//! so the output does not depend on the thread count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{grid_time, simulate_with_key, OutputGrid, RunSettings, StepScheme, Trajectory};
use crate::metrics::{ensemble_mean, MeanSeries};
use crate::model::{ModelConfig, SystemState};
use crate::rng::{Purpose, StreamKey};

pub const SCHEMA_VERSION: u32 = 1;

/// How initial states are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitSpec {
    /// Every particle i.i.d. uniform on the box: `x_i ∈ Π[x_low, x_high]`,
    /// `v_i ∈ Π[v_low, v_high]`, one bound per coordinate.
    UniformBox {
        x_low: Vec<f64>,
        x_high: Vec<f64>,
        v_low: Vec<f64>,
        v_high: Vec<f64>,
    },
    Explicit { state: SystemState },
}

impl InitSpec {
    /// `[lo, hi]^d` for both positions and velocities.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        InitSpec::UniformBox {
            x_low: vec![lo; d],
            x_high: vec![hi; d],
            v_low: vec![lo; d],
            v_high: vec![hi; d],
        }
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            InitSpec::UniformBox {
                x_low,
                x_high,
                v_low,
                v_high,
            } => {
                for (name, lo, hi) in [("x", x_low, x_high), ("v", v_low, v_high)] {
                    if lo.len() != d || hi.len() != d {
                        return Err(Error::config(format!(
                            "{name} box has {}/{} bounds, dimension is {d}",
                            lo.len(),
                            hi.len()
                        )));
                    }
                    for (k, (l, h)) in lo.iter().zip(hi).enumerate() {
                        if !(l.is_finite() && h.is_finite()) {
                            return Err(Error::config(format!("{name} box bound {k} is not finite")));
                        }
                        if l > h {
                            return Err(Error::config(format!("{name} box coordinate {k}: low {l} > high {h}")));
                        }
                    }
                }
                Ok(())
            }
            InitSpec::Explicit { state } => {
                if state.n() != n || state.d() != d {
                    return Err(Error::mismatch(format!(
                        "explicit initial state is {}x{}, model is {n}x{d}",
                        state.n(),
                        state.d()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Initial state at `t = 0` for an `n`-particle system, using the stream of `key`.
/// Per particle the draw order is `x_i` then `v_i`, coordinate by coordinate.
pub fn sample_initial(spec: &InitSpec, n: usize, d: usize, key: StreamKey) -> Result<SystemState> {
    spec.validate(n, d)?;
    match spec {
        InitSpec::Explicit { state } => Ok(state.clone()),
        InitSpec::UniformBox {
            x_low,
            x_high,
            v_low,
            v_high,
        } => {
            let key = StreamKey { purpose: Purpose::Init, ..key };
            let mut rng = key.stream(0, 0);
            let mut x = Vec::with_capacity(n * d);
            let mut v = Vec::with_capacity(n * d);
            for _ in 0..n {
                for k in 0..d {
                    x.push(x_low[k] + (x_high[k] - x_low[k]) * rng.uniform());
                }
                for k in 0..d {
                    v.push(v_low[k] + (v_high[k] - v_low[k]) * rng.uniform());
                }
            }
            SystemState::new(0.0, n, d, x, v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub model: ModelConfig,
    pub scheme: StepScheme,
    pub dt: f64,
    pub horizon: f64,
    pub output: OutputGrid,
    pub n_trials: usize,
    pub base_seed: u64,
    pub init: InitSpec,
    /// Every trial starts from trial 0's initial state.
    #[serde(default)]
    pub fixed_init: bool,
    /// Worker threads; `None` uses all cores. Never serialised, since results
    /// do not depend on it.
    #[serde(default, skip_serializing)]
    pub parallelism: Option<usize>,
    /// Output times at which trial 0's full state is kept.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "yes")]
    pub ito_correction: bool,
}

fn yes() -> bool {
    true
}

impl EnsembleConfig {
    pub fn new(model: ModelConfig, dt: f64, horizon: f64, output: OutputGrid, n_trials: usize, base_seed: u64, init: InitSpec) -> Self {
        EnsembleConfig {
            model,
            scheme: StepScheme::EulerMaruyamaIto,
            dt,
            horizon,
            output,
            n_trials,
            base_seed,
            init,
            fixed_init: false,
            parallelism: None,
            snapshot_times: Vec::new(),
            ito_correction: true,
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            dt: self.dt,
            horizon: self.horizon,
            output: self.output.clone(),
            keep_snapshots: false,
            ito_correction: self.ito_correction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_trials == 0 {
            return Err(Error::config("n_trials must be >= 1"));
        }
        if self.parallelism == Some(0) {
            return Err(Error::config("parallelism must be >= 1"));
        }
        self.init.validate(self.model.n, self.model.d)?;
        self.settings().output_steps()?;
        Ok(())
    }

    pub fn trial_key(&self, trial: usize, purpose: Purpose) -> StreamKey {
        StreamKey::new(self.base_seed, trial as u64, purpose)
    }

    pub fn initial_state(&self, trial: usize) -> Result<SystemState> {
        let k = if self.fixed_init { 0 } else { trial };
        sample_initial(&self.init, self.model.n, self.model.d, self.trial_key(k, Purpose::Init))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub trial: usize,
    pub step: usize,
    pub time: f64,
}

/// First and last recorded diagnostics of one trial. `last` is `None` for a
/// diverged trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub init_seed: StreamKey,
    pub noise_seed: StreamKey,
    pub initial: Terminal,
    pub last: Option<Terminal>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub t: f64,
    pub v2_centered: f64,
    pub dispersion: f64,
    pub mean_pair_dist: f64,
    pub x_centered_norm: f64,
}

impl Terminal {
    fn of(traj: &Trajectory, k: usize) -> Self {
        let g = &traj.diagnostics;
        Terminal {
            t: traj.times[k],
            v2_centered: g.v2_centered[k],
            dispersion: g.dispersion[k],
            mean_pair_dist: g.mean_pair_dist[k],
            x_centered_norm: g.x_centered_norm[k],
        }
    }

    fn initial(state: &SystemState) -> Self {
        let (_, mean_pair) = crate::metrics::position_spread(state);
        Terminal {
            t: state.t(),
            v2_centered: crate::metrics::centered_speed_norm2(state),
            dispersion: crate::metrics::velocity_dispersion(state),
            mean_pair_dist: mean_pair,
            x_centered_norm: crate::metrics::centered_position_norm(state),
        }
    }
}

/// Per-time mean and standard error over the trials that did not diverge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub dispersion: MeanSeries,
    pub v2_centered: MeanSeries,
    pub mean_pair_dist: MeanSeries,
    pub x_centered_norm: MeanSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub base_seed: u64,
    /// Key layout of the per-trial streams.
    pub seeding: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub schema_version: u32,
    pub config: EnsembleConfig,
    pub provenance: Provenance,
    pub grid: Vec<f64>,
    pub aggregates: Aggregates,
    /// Set when every trial diverged; the aggregate series are then empty.
    pub empty_aggregate: bool,
    pub diverged: Vec<Divergence>,
    /// Trials diverged at or before each grid time.
    pub diverged_count: Vec<usize>,
    pub trials: Vec<TrialSummary>,
    /// Trial 0's states at `config.snapshot_times` (absent if it diverged).
    #[serde(default)]
    pub snapshots: Vec<SystemState>,
}

impl EnsembleResult {
    pub fn trials_used(&self) -> usize {
        self.aggregates.dispersion.trials_used
    }
}

type TrialOutcome = (TrialSummary, std::result::Result<Trajectory, Divergence>);

fn run_trial(config: &EnsembleConfig, settings: &RunSettings, trial: usize) -> Result<TrialOutcome> {
    let init = config.initial_state(trial)?;
    let init_key = config.trial_key(if config.fixed_init { 0 } else { trial }, Purpose::Init);
    let noise_key = config.trial_key(trial, Purpose::Noise);
    let mut settings = settings.clone();
    settings.keep_snapshots = trial == 0 && !config.snapshot_times.is_empty();
    let mut summary = TrialSummary {
        trial,
        init_seed: init_key,
        noise_seed: noise_key,
        initial: Terminal::initial(&init),
        last: None,
    };
    match simulate_with_key(&config.model, &init, config.scheme, &settings, noise_key) {
        Ok(traj) => {
            summary.last = Some(Terminal::of(&traj, traj.len() - 1));
            Ok((summary, Ok(traj)))
        }
        Err(Error::BlowUp { step, time }) => Ok((summary, Err(Divergence { trial, step, time }))),
        Err(e) => Err(e),
    }
}

pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let settings = config.settings();
    let out_steps = settings.output_steps()?;
    let grid: Vec<f64> = out_steps.iter().map(|&k| grid_time(k, config.dt)).collect();
    let snapshot_idx = config
        .snapshot_times
        .iter()
        .map(|&t| {
            grid.iter()
                .position(|&g| (g - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| Error::config(format!("snapshot time {t} is not an output time")))
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(p) = config.parallelism {
        builder = builder.num_threads(p);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        (0..config.n_trials)
            .into_par_iter()
            .map(|k| run_trial(config, &settings, k))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut trials = Vec::with_capacity(outcomes.len());
    let mut diverged = Vec::new();
    let mut series: [Vec<Vec<f64>>; 4] = Default::default();
    let mut snapshots = Vec::new();
    for (summary, outcome) in outcomes {
        match outcome {
            Ok(traj) => {
                if summary.trial == 0 {
                    snapshots = snapshot_idx.iter().map(|&i| traj.snapshots[i].clone()).collect();
                }
                let g = traj.diagnostics;
                series[0].push(g.dispersion);
                series[1].push(g.v2_centered);
                series[2].push(g.mean_pair_dist);
                series[3].push(g.x_centered_norm);
            }
            Err(div) => diverged.push(div),
        }
        trials.push(summary);
    }
    let empty_aggregate = series[0].is_empty();
    let mean = |s: &[Vec<f64>]| -> Result<MeanSeries> {
        if s.is_empty() {
            return Ok(MeanSeries {
                mean: Vec::new(),
                stderr: Vec::new(),
                trials_used: 0,
                trials_excluded: diverged.len(),
            });
        }
        let mut m = ensemble_mean(s)?;
        m.trials_excluded += diverged.len();
        Ok(m)
    };
    let aggregates = Aggregates {
        dispersion: mean(&series[0])?,
        v2_centered: mean(&series[1])?,
        mean_pair_dist: mean(&series[2])?,
        x_centered_norm: mean(&series[3])?,
    };
    let diverged_count = grid
        .iter()
        .map(|&t| diverged.iter().filter(|d| d.time <= t + 1e-12).count())
        .collect();

    Ok(EnsembleResult {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        provenance: Provenance {
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            base_seed: config.base_seed,
            seeding: "chacha8 key=(base_seed, trial, purpose) nonce=channel".to_string(),
        },
        grid,
        aggregates,
        empty_aggregate,
        diverged,
        diverged_count,
        trials,
        snapshots,
    })
}

/// Writes `result` as JSON. Floats are written in shortest round-trip form.
pub fn persist(result: &EnsembleResult, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, result).map_err(|e| Error::Schema(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EnsembleResult> {
    let text = fs::read_to_string(path)?;
    from_json(&text)
}

pub fn from_json(text: &str) -> Result<EnsembleResult> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("not a complete JSON document: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if version > u64::from(SCHEMA_VERSION) {
        return Err(Error::Schema(format!(
            "file has schema version {version}, this build reads version {SCHEMA_VERSION}; upgrade to load it"
        )));
    }
    if version < u64::from(SCHEMA_VERSION) {
        return Err(Error::Schema(format!("unsupported schema version {version}")));
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kernel, NoiseModel};

    fn small(trials: usize) -> EnsembleConfig {
        let model = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(0.1), 5, 2);
        EnsembleConfig::new(model, 1e-3, 0.1, OutputGrid::Every(10), trials, 11, InitSpec::cube(2, 0.0, 1.0))
    }

    #[test]
    fn zero_box_gives_zero_state() {
        let s = sample_initial(&InitSpec::cube(3, 0.0, 0.0), 4, 3, StreamKey::new(1, 0, Purpose::Init)).unwrap();
        assert!(s.positions().iter().chain(s.velocities()).all(|&x| x == 0.0));
    }

    #[test]
    fn fig1_box_bounds() {
        let s = sample_initial(&InitSpec::cube(2, 0.0, 0.1), 50, 2, StreamKey::new(9, 3, Purpose::Init)).unwrap();
        assert!(s.positions().iter().chain(s.velocities()).all(|&x| (0.0..=0.1).contains(&x)));
    }

    #[test]
    fn box_mean_clt() {
        let s = sample_initial(&InitSpec::cube(1, 0.0, 1.0), 100_000, 1, StreamKey::new(4, 0, Purpose::Init)).unwrap();
        let mean = s.positions().iter().sum::<f64>() / 1e5;
        assert!((0.497..=0.503).contains(&mean), "{mean}");
    }

    #[test]
    fn degenerate_box_rejected() {
        let spec = InitSpec::UniformBox {
            x_low: vec![1.0],
            x_high: vec![0.0],
            v_low: vec![0.0],
            v_high: vec![1.0],
        };
        assert!(sample_initial(&spec, 3, 1, StreamKey::new(0, 0, Purpose::Init)).is_err());
    }

    #[test]
    fn init_and_noise_streams_differ() {
        let cfg = small(3);
        let a = cfg.initial_state(0).unwrap();
        let b = cfg.initial_state(1).unwrap();
        assert_ne!(a, b);
        let mut fixed = cfg.clone();
        fixed.fixed_init = true;
        assert_eq!(fixed.initial_state(2).unwrap(), a);
        assert_ne!(cfg.trial_key(1, Purpose::Init).key_bytes(), cfg.trial_key(1, Purpose::Noise).key_bytes());
    }

    #[test]
    fn single_trial_matches_its_trajectory() {
        let cfg = small(1);
        let res = run_ensemble(&cfg).unwrap();
        let init = cfg.initial_state(0).unwrap();
        let traj =
            simulate_with_key(&cfg.model, &init, cfg.scheme, &cfg.settings(), cfg.trial_key(0, Purpose::Noise)).unwrap();
        assert_eq!(res.aggregates.dispersion.mean, traj.diagnostics.dispersion);
        assert!(res.aggregates.dispersion.stderr.iter().all(|&s| s == 0.0));
        assert_eq!(res.grid.len(), 11);
    }

    #[test]
    fn schedule_independent() {
        let mut cfg = small(16);
        cfg.parallelism = Some(1);
        let a = run_ensemble(&cfg).unwrap();
        cfg.parallelism = Some(4);
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a.aggregates, b.aggregates);
        assert_eq!(a.trials, b.trials);
        assert_eq!(run_ensemble(&cfg).unwrap().aggregates, b.aggregates);
    }

    #[test]
    fn divergence_is_recorded() {
        let model = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(30.0), 5, 1);
        let cfg = EnsembleConfig::new(model, 1e-2, 5.0, OutputGrid::Every(10), 4, 1, InitSpec::cube(1, 0.0, 1.0));
        let res = run_ensemble(&cfg).unwrap();
        assert_eq!(res.diverged.len(), 4);
        assert!(res.empty_aggregate);
        assert!(res.aggregates.dispersion.mean.is_empty());
        assert_eq!(*res.diverged_count.last().unwrap(), 4);
        assert_eq!(res.diverged_count[0], 0);
    }

    #[test]
    fn snapshots_of_trial_zero() {
        let mut cfg = small(2);
        cfg.snapshot_times = vec![0.0, 0.02, 0.1];
        let res = run_ensemble(&cfg).unwrap();
        let times: Vec<f64> = res.snapshots.iter().map(SystemState::t).collect();
        assert_eq!(times.len(), 3);
        assert!((times[1] - 0.02).abs() < 1e-12);
        cfg.snapshot_times = vec![0.015];
        assert!(run_ensemble(&cfg).is_err());
    }

    #[test]
    fn persist_round_trip() {
        let res = run_ensemble(&small(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        persist(&res, &path).unwrap();
        assert_eq!(load(&path).unwrap(), res);

        let text = fs::read_to_string(&path).unwrap();
        let truncated = dir.path().join("truncated.json");
        fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load(&truncated), Err(Error::Schema(_))));

        let newer = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        let err = from_json(&newer).unwrap_err().to_string();
        assert!(err.contains("schema version 2"), "{err}");
    }
}
