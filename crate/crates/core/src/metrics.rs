//! Flocking diagnostics and Monte Carlo estimators.

use serde::{Deserialize, Serialize};

use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::model::{row_mean, SystemState};

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ_{i<j} |v_i − v_j|²`, summed pair by pair.
pub fn velocity_dispersion(state: &SystemState) -> f64 {
    let n = state.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += dist2(state.velocity(i), state.velocity(j));
        }
    }
    total
}

/// `Σ_i |v_i − v̄|²`.
pub fn centered_speed_norm2(state: &SystemState) -> f64 {
    centered_norm2(state.velocities(), state.n(), state.d())
}

/// `(Σ_i |x_i − x̄|²)^½`.
pub fn centered_position_norm(state: &SystemState) -> f64 {
    centered_norm2(state.positions(), state.n(), state.d()).sqrt()
}

fn centered_norm2(data: &[f64], n: usize, d: usize) -> f64 {
    let mean = row_mean(data, n, d);
    data.chunks_exact(d)
        .map(|row| dist2(row, &mean))
        .sum()
}

/// Largest and pair-averaged inter-particle distance.
pub fn position_spread(state: &SystemState) -> (f64, f64) {
    let n = state.n();
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = dist2(state.position(i), state.position(j)).sqrt();
            max = max.max(r);
            sum += r;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    (max, sum / pairs)
}

/// Pointwise sample mean and standard error across trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSeries {
    pub mean: Vec<f64>,
    /// `sample std / √trials`; zero when only one trial contributes.
    pub stderr: Vec<f64>,
    pub trials_used: usize,
    /// Trials dropped because they contain a non-finite value.
    pub trials_excluded: usize,
}

/// Monte Carlo mean of per-trial series sampled on a common grid.
///
/// A trial holding any non-finite value is treated as diverged: it is left
/// out of the mean and counted in `trials_excluded`. The reduction runs in
/// trial order, so the result depends only on the input order.
pub fn ensemble_mean(series: &[Vec<f64>]) -> Result<MeanSeries> {
    let len = match series.first() {
        Some(s) => s.len(),
        None => return Err(Error::config("ensemble_mean needs at least one trial")),
    };
    if let Some(bad) = series.iter().position(|s| s.len() != len) {
        return Err(Error::mismatch(format!(
            "trial {bad} has {} samples, trial 0 has {len}",
            series[bad].len()
        )));
    }
    let used: Vec<&Vec<f64>> = series.iter().filter(|s| s.iter().all(|x| x.is_finite())).collect();
    let m = used.len();
    let excluded = series.len() - m;
    if m == 0 {
        return Ok(MeanSeries {
            mean: Vec::new(),
            stderr: Vec::new(),
            trials_used: 0,
            trials_excluded: excluded,
        });
    }
    let mut mean = vec![0.0; len];
    for s in &used {
        mean.iter_mut().zip(s.iter()).for_each(|(a, x)| *a += x);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut stderr = vec![0.0; len];
    if m > 1 {
        for s in &used {
            for (k, x) in s.iter().enumerate() {
                let dev = x - mean[k];
                stderr[k] += dev * dev;
            }
        }
        let denom = (m - 1) as f64;
        stderr
            .iter_mut()
            .for_each(|v| *v = (*v / denom).sqrt() / (m as f64).sqrt());
    }
    Ok(MeanSeries {
        mean,
        stderr,
        trials_used: m,
        trials_excluded: excluded,
    })
}

/// `w_t / t` of channel 0 at the requested times.
pub fn slln_diagnostic(path: &BrownianPath, times: &[f64]) -> Result<Vec<f64>> {
    if let Some(&t) = times.iter().find(|&&t| t <= 0.0) {
        return Err(Error::config(format!("w_t/t is undefined at t = {t}")));
    }
    let w = path.values_at(0, times)?;
    Ok(w.iter().zip(times).map(|(w, t)| w / t).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Satisfied,
    Violated,
    Undetermined,
}

/// Part of the horizon the classifier looks at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Samples with `t >= t_end − fraction·(t_end − t_0)`.
    TrailingFraction(f64),
    /// Samples with `start <= t <= end`.
    Span { start: f64, end: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::TrailingFraction(0.5)
    }
}

/// Log-slope thresholds, per unit time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub velocity: f64,
    pub position: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            velocity: 0.1,
            position: 0.1,
        }
    }
}

/// Ensemble-level inputs of [`classify_flocking`].
#[derive(Clone, Copy, Debug)]
pub struct EnsembleDiagnostics<'a> {
    pub times: &'a [f64],
    pub mean_dispersion: &'a [f64],
    pub mean_pair_distance: &'a [f64],
    pub diverged_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub window_start: f64,
    pub window_end: f64,
    pub samples: usize,
    /// Least-squares slope of `ln(mean dispersion)`; `None` if the dispersion
    /// vanishes somewhere in the window.
    pub dispersion_log_slope: Option<f64>,
    pub dispersion_log_slope_stderr: Option<f64>,
    pub initial_dispersion: f64,
    pub final_dispersion: f64,
    /// Least-squares slope of `ln(mean pair distance)`; `None` if it vanishes.
    pub pair_distance_log_slope: Option<f64>,
    pub pair_distance_log_slope_stderr: Option<f64>,
    pub max_pair_distance: f64,
    pub diverged_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlockingVerdict {
    pub velocity_alignment: Criterion,
    pub group_forming: Criterion,
    pub evidence: Evidence,
}

pub const MIN_WINDOW_SAMPLES: usize = 10;

/// Ordinary least squares slope and its standard error.
fn fit_slope(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let resid: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - ym - slope * (a - tm);
            e * e
        })
        .sum();
    let se = if t.len() > 2 {
        (resid / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

fn log_fit(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if y.iter().all(|&v| v > 0.0) {
        let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        Some(fit_slope(t, &logs))
    } else {
        None
    }
}

/// Finite-window reading of time-asymptotic flocking.
///
/// * velocity alignment: satisfied if the log-slope of the mean dispersion is
///   `<= −margin` and the dispersion ends below where it started; violated if
///   the slope is `>= +margin` or any trial diverged; an identically zero
///   dispersion counts as aligned.
/// * group forming: satisfied if the log-slope of the mean pair distance is
///   `<= margin / 2`, violated if `>= margin`.
///
/// Anything in between is [`Criterion::Undetermined`].
pub fn classify_flocking(
    diag: &EnsembleDiagnostics<'_>,
    window: Window,
    margins: Margins,
) -> Result<FlockingVerdict> {
    let len = diag.times.len();
    if diag.mean_dispersion.len() != len || diag.mean_pair_distance.len() != len {
        return Err(Error::mismatch("diagnostic series are not aligned with the time grid"));
    }
    if len == 0 {
        return Err(Error::config("no samples to classify"));
    }
    let (t0, t_end) = (diag.times[0], diag.times[len - 1]);
    let (start, end) = match window {
        Window::TrailingFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("window fraction {f} not in (0, 1]")));
            }
            (t_end - f * (t_end - t0), t_end)
        }
        Window::Span { start, end } => (start, end),
    };
    let eps = 1e-9 * (t_end - t0).abs().max(1.0);
    let idx: Vec<usize> = (0..len)
        .filter(|&k| diag.times[k] >= start - eps && diag.times[k] <= end + eps)
        .collect();
    if idx.len() < MIN_WINDOW_SAMPLES {
        return Err(Error::config(format!(
            "window [{start}, {end}] holds {} samples, need at least {MIN_WINDOW_SAMPLES}",
            idx.len()
        )));
    }
    let t: Vec<f64> = idx.iter().map(|&k| diag.times[k]).collect();
    let f: Vec<f64> = idx.iter().map(|&k| diag.mean_dispersion[k]).collect();
    let r: Vec<f64> = idx.iter().map(|&k| diag.mean_pair_distance[k]).collect();

    let f_fit = log_fit(&t, &f);
    let r_fit = log_fit(&t, &r);
    let (first, last) = (diag.mean_dispersion[0], diag.mean_dispersion[len - 1]);

    let velocity_alignment = if diag.diverged_trials > 0 {
        Criterion::Violated
    } else if f.iter().all(|&v| v == 0.0) {
        Criterion::Satisfied
    } else {
        match f_fit {
            Some((slope, _)) if slope <= -margins.velocity && last < first => Criterion::Satisfied,
            Some((slope, _)) if slope >= margins.velocity => Criterion::Violated,
            _ => Criterion::Undetermined,
        }
    };
    let group_forming = match r_fit {
        Some((slope, _)) if slope <= 0.5 * margins.position => Criterion::Satisfied,
        Some((slope, _)) if slope >= margins.position => Criterion::Violated,
        Some(_) => Criterion::Undetermined,
        None if r.iter().all(|&v| v == 0.0) => Criterion::Satisfied,
        None => Criterion::Undetermined,
    };
    Ok(FlockingVerdict {
        velocity_alignment,
        group_forming,
        evidence: Evidence {
            window_start: t[0],
            window_end: *t.last().unwrap(),
            samples: t.len(),
            dispersion_log_slope: f_fit.map(|p| p.0),
            dispersion_log_slope_stderr: f_fit.map(|p| p.1),
            initial_dispersion: first,
            final_dispersion: last,
            pair_distance_log_slope: r_fit.map(|p| p.0),
            pair_distance_log_slope_stderr: r_fit.map(|p| p.1),
            max_pair_distance: r.iter().copied().fold(0.0, f64::max),
            diverged_trials: diag.diverged_trials,
        },
    })
}
