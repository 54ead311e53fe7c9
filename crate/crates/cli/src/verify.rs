//! Desk-scale invariant and oracle suite behind `flocking verify`.

use anyhow::Result;
use flocking_core::brownian::make_brownian_path;
use flocking_core::ensemble::{run_ensemble, sample_initial, EnsembleConfig, InitSpec};
use flocking_core::metrics::{centered_speed_norm2, slln_diagnostic, velocity_dispersion};
use flocking_core::model::{center_frame, diffusion_common, drift, ito_correction_common};
use flocking_core::oracles::{
    expected_decay_exact_const, expected_decay_upper_stated, expected_growth_lower, pathwise_v_exact_const,
    pathwise_v_upper, pathwise_x_upper, thresholds, Thresholds,
};
use flocking_core::{
    simulate, simulate_on_path, ChannelLayout, Kernel, KernelBounds, ModelConfig, NoiseModel, OutputGrid, Purpose,
    RunSettings, StepScheme, StreamKey, SystemState,
};
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trials of the in-expectation decay check.
    pub trials: usize,
    /// Negative control: drop the Itô correction from the common-noise drift.
    pub ito_correction: bool,
    pub threads: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            trials: 1000,
            ito_correction: true,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub description: &'static str,
    pub measured: f64,
    /// `measured` must be `<= bound` (or `>= bound` when `at_least`).
    pub bound: f64,
    pub at_least: bool,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, description: &'static str, measured: f64, bound: f64, tolerance: f64) -> Self {
        Check {
            name,
            description,
            measured,
            bound,
            at_least: false,
            tolerance,
            passed: measured <= bound,
        }
    }

    fn at_least(name: &'static str, description: &'static str, measured: f64, bound: f64, tolerance: f64) -> Self {
        Check {
            name,
            description,
            measured,
            bound,
            at_least: true,
            tolerance,
            passed: measured >= bound,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub n: usize,
    pub alpha: f64,
    pub psi_star: f64,
    pub sigma_flock_max: f64,
    pub sigma_nonflock_min: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub seed: u64,
    pub ito_correction: bool,
    pub checks: Vec<Check>,
    pub thresholds: ThresholdReport,
    pub all_passed: bool,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn random_state(n: usize, d: usize, seed: u64, trial: u64) -> Result<SystemState> {
    Ok(sample_initial(&InitSpec::cube(d, -1.0, 1.0), n, d, StreamKey::new(seed, trial, Purpose::Init))?)
}

fn centered(n: usize, d: usize, seed: u64, trial: u64) -> Result<SystemState> {
    Ok(center_frame(&random_state(n, d, seed, trial)?).0)
}

fn column_sums(field: &[f64], d: usize) -> (f64, f64) {
    let mut sums = vec![0.0; d];
    let mut scale: f64 = 0.0;
    for row in field.chunks_exact(d) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        scale = scale.max(norm);
        sums.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    (sums.iter().fold(0.0f64, |m, s| m.max(s.abs())), scale)
}

fn row_sums(opts: &VerifyOptions) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let s = random_state(7, 3, opts.seed, trial)?;
        let cfg = ModelConfig::new(Kernel::rational(1.0, 1.0, 0.25), NoiseModel::common(0.4), 7, 3);
        for field in [drift(&s, &cfg)?.dv, diffusion_common(&s, 0.4)?, ito_correction_common(&s, 0.4)?] {
            let (sum, scale) = column_sums(&field, 3);
            if scale > 0.0 {
                worst = worst.max(sum / scale);
            }
        }
    }
    Ok(Check::at_most(
        "field_row_sums",
        "alignment, diffusion and correction fields sum to zero over particles (relative to max row norm)",
        worst,
        1e-12,
        1e-12,
    ))
}

fn contraction(opts: &VerifyOptions) -> Result<Check> {
    let (n, d, sigma) = (6, 2, 0.35);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let s = centered(n, d, opts.seed, trial)?;
        let g = diffusion_common(&s, sigma)?;
        let c = if opts.ito_correction {
            ito_correction_common(&s, sigma)?
        } else {
            vec![0.0; g.len()]
        };
        let v = s.velocities();
        let vc: f64 = v.iter().zip(&c).map(|(a, b)| a * b).sum();
        let gg: f64 = g.iter().map(|x| x * x).sum();
        let v2: f64 = v.iter().map(|x| x * x).sum();
        let nf = n as f64;
        let rhs = 2.0 * nf * nf * sigma * sigma * v2;
        worst = worst.max((2.0 * vc + gg - rhs).abs() / rhs);
    }
    Ok(Check::at_most(
        "ito_contraction_identity",
        "2Σ<v_i,c_i> + Σ|g_i|² = 2N²σ²|v|² on centered states",
        worst,
        1e-12,
        1e-12,
    ))
}

fn dispersion_identity(opts: &VerifyOptions) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let s = random_state(9, 2, opts.seed, trial)?;
        let a = velocity_dispersion(&s);
        let b = 9.0 * centered_speed_norm2(&s);
        worst = worst.max((a - b).abs() / b);
    }
    Ok(Check::at_most(
        "dispersion_identity",
        "Σ_{i<j}|v_i − v_j|² = N|v − v̄|²",
        worst,
        1e-12,
        1e-12,
    ))
}

fn conservation(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let cfg = ModelConfig::new(Kernel::rational(1.0, 1.0, 0.25), NoiseModel::common(0.2), 5, 2);
    let init = sample_initial(&InitSpec::cube(2, 0.0, 1.0), 5, 2, StreamKey::new(opts.seed, 0, Purpose::Init))?;
    let mut settings = RunSettings::new(1e-3, 1.0, OutputGrid::Every(1));
    settings.ito_correction = opts.ito_correction;
    let traj = simulate(&cfg, &init, StepScheme::EulerMaruyamaIto, &settings, opts.seed)?;
    let (v0, x0) = (init.mean_velocity(), init.mean_position());
    let mut dv: f64 = 0.0;
    let mut dx: f64 = 0.0;
    for s in &traj.snapshots {
        let (v, x) = (s.mean_velocity(), s.mean_position());
        for k in 0..2 {
            dv = dv.max((v[k] - v0[k]).abs());
            dx = dx.max((x[k] - x0[k] - v0[k] * s.t()).abs());
        }
    }
    Ok(vec![
        Check::at_most(
            "mean_velocity_conservation",
            "max |v̄(t) − v̄(0)| over a T=1 run, N=5, σ=0.2, dt=1e-3",
            dv,
            1e-10,
            1e-10,
        ),
        Check::at_most(
            "mean_position_drift",
            "max |x̄(t) − x̄(0) − v̄(0)t| over the same run",
            dx,
            1e-9,
            1e-9,
        ),
    ])
}

fn exact_log_gap(opts: &VerifyOptions, scheme: StepScheme, dt: f64, seed: u64) -> Result<f64> {
    let (n, sigma, c) = (5, 0.1, 1.0);
    let cfg = ModelConfig::new(Kernel::constant(c), NoiseModel::common(sigma), n, 2);
    let init = centered(n, 2, seed, 0)?;
    let steps = (1.0 / dt).round() as usize;
    let path = make_brownian_path(seed, dt, steps, ChannelLayout::Common)?;
    let mut settings = RunSettings::new(dt, 1.0, OutputGrid::Every(1)).without_snapshots();
    settings.ito_correction = opts.ito_correction;
    let traj = simulate_on_path(&cfg, &init, scheme, &settings, &path)?;
    let oracle = pathwise_v_exact_const(centered_speed_norm2(&init), n, sigma, c, &path, &traj.times)?;
    Ok(traj
        .diagnostics
        .v2_centered
        .iter()
        .zip(&oracle.values)
        .map(|(s, o)| (s.ln() - o.ln()).abs())
        .fold(0.0, f64::max))
}

fn pathwise_exact(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let em = exact_log_gap(opts, StepScheme::EulerMaruyamaIto, 1e-4, opts.seed)?;
    let dts = [1e-3, 5e-4, 2.5e-4];
    let mut orders = Vec::new();
    let mut finest: f64 = 0.0;
    for k in 0..3 {
        let errs = dts
            .iter()
            .map(|&dt| exact_log_gap(opts, StepScheme::EulerHeunStratonovich, dt, opts.seed + k))
            .collect::<Result<Vec<_>>>()?;
        finest = finest.max(errs[2]);
        orders.push((errs[0] / errs[2]).log2() / 2.0);
    }
    let order = orders.iter().sum::<f64>() / orders.len() as f64;
    Ok(vec![
        Check::at_most(
            "pathwise_exact_log_gap",
            "max_t |log|v|²_EM − log oracle| for ψ≡1, N=5, σ=0.1, dt=1e-4 on a shared path",
            em,
            1e-2,
            1e-2,
        ),
        Check::at_most(
            "pathwise_exact_log_gap_heun",
            "same gap for the Stratonovich Heun scheme at dt=2.5e-4",
            finest,
            1e-2,
            1e-2,
        ),
        Check::at_least(
            "heun_strong_order",
            "empirical strong order of the Heun scheme over dt = 1e-3, 5e-4, 2.5e-4",
            order,
            0.9,
            0.1,
        ),
    ])
}

fn domination(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let (n, sigma) = (5, 0.2);
    let cfg = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(sigma), n, 2);
    let mut settings = RunSettings::new(1e-4, 1.0, OutputGrid::Every(100)).without_snapshots();
    settings.ito_correction = opts.ito_correction;
    let (mut rv, mut rx): (f64, f64) = (0.0, 0.0);
    for k in 0..20 {
        let seed = opts.seed.wrapping_add(k);
        let init = centered(n, 2, seed, 0)?;
        let path = make_brownian_path(seed, 1e-4, 10_000, ChannelLayout::Common)?;
        let traj = simulate_on_path(&cfg, &init, StepScheme::EulerMaruyamaIto, &settings, &path)?;
        let g = &traj.diagnostics;
        let vb = pathwise_v_upper(g.v2_centered[0], n, sigma, &path, &traj.times)?;
        let xb = pathwise_x_upper(g.x_centered_norm[0], g.v2_centered[0].sqrt(), n, sigma, &path, &traj.times)?;
        for i in 0..traj.len() {
            rv = rv.max(g.v2_centered[i] / vb.values[i]);
            rx = rx.max(g.x_centered_norm[i] / xb.values[i]);
        }
    }
    Ok(vec![
        Check::at_most(
            "pathwise_v_domination",
            "max_t |v(t)|² / (|v(0)|² e^{−2Nσw_t}) over 20 seeds, ψ≡1, N=5, σ=0.2",
            rv,
            1.05,
            0.05,
        ),
        Check::at_most(
            "pathwise_x_domination",
            "max_t |x(t)| / (|x(0)| + |v(0)|∫e^{−Nσw_s}ds) over the same runs",
            rx,
            1.05,
            0.05,
        ),
    ])
}

fn lognormal(opts: &VerifyOptions) -> Result<Check> {
    let (n, sigma, c) = (5, 0.1, 1.0);
    let times = [0.5, 1.0];
    let mut cols = [Vec::new(), Vec::new()];
    for k in 0..10_000u64 {
        let path = make_brownian_path(opts.seed.wrapping_add(k), 0.01, 100, ChannelLayout::Common)?;
        let b = pathwise_v_exact_const(1.0, n, sigma, c, &path, &times)?;
        cols[0].push(b.values[0]);
        cols[1].push(b.values[1]);
    }
    let exact = expected_decay_exact_const(1.0, n, sigma, c, &times)?;
    let z = (0..2)
        .map(|k| {
            let (m, se) = mean_stderr(&cols[k]);
            (m - exact.values[k]).abs() / se
        })
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "oracle_consistency",
        "mean of the pathwise exact solution over 10^4 paths vs the closed-form mean, in stderr units",
        z,
        3.0,
        3.0,
    ))
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn noise_free(opts: &VerifyOptions) -> Result<Check> {
    let (n, c, dt) = (5, 0.5, 1e-4);
    let cfg = ModelConfig::new(Kernel::constant(c), NoiseModel::None, n, 2);
    let init = centered(n, 2, opts.seed, 1)?;
    let v0 = centered_speed_norm2(&init);
    let settings = RunSettings::new(dt, 1.0, OutputGrid::Every(100)).without_snapshots();
    let traj = simulate(&cfg, &init, StepScheme::EulerMaruyamaIto, &settings, opts.seed)?;
    let exact = expected_decay_exact_const(v0, n, 0.0, c, &traj.times)?;
    let err = traj
        .diagnostics
        .v2_centered
        .iter()
        .zip(&exact.values)
        .map(|(s, e)| (s / e - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "noise_free_exactness",
        "relative error of |v(t)|² against |v(0)|² e^{−2Nct} without noise, ψ≡0.5, dt=1e-4",
        err,
        10.0 * dt,
        10.0 * dt,
    ))
}

fn expected_decay(opts: &VerifyOptions) -> Result<Check> {
    let (n, sigma) = (5, 0.1);
    let model = ModelConfig::new(Kernel::constant(1.0), NoiseModel::common(sigma), n, 2);
    let mut cfg = EnsembleConfig::new(
        model,
        1e-3,
        1.0,
        OutputGrid::Every(100),
        opts.trials,
        opts.seed,
        InitSpec::cube(2, 0.0, 1.0),
    );
    cfg.fixed_init = true;
    cfg.parallelism = opts.threads;
    cfg.ito_correction = opts.ito_correction;
    let res = run_ensemble(&cfg)?;
    let v0 = res.trials[0].initial.v2_centered;
    let exact = expected_decay_exact_const(v0, n, sigma, 1.0, &[1.0])?.values[0];
    let agg = &res.aggregates.v2_centered;
    let z = match (agg.mean.last(), agg.stderr.last()) {
        (Some(m), Some(se)) if *se > 0.0 => (m - exact).abs() / se,
        _ => f64::INFINITY,
    };
    Ok(Check::at_most(
        "expected_decay_moment",
        "ensemble mean of |v(1)|² vs |v(0)|² e^{2N(Nσ²−c)}, ψ≡1, N=5, σ=0.1, in stderr units",
        z,
        3.0,
        3.0,
    ))
}

fn slln(opts: &VerifyOptions) -> Result<Check> {
    let t: f64 = 1000.0;
    let bound = 4.0 / t.sqrt();
    let mut inside = 0;
    for k in 0..100u64 {
        let path = make_brownian_path(opts.seed.wrapping_add(k), 0.01, 100_000, ChannelLayout::Common)?;
        if slln_diagnostic(&path, &[t])?[0].abs() <= bound {
            inside += 1;
        }
    }
    Ok(Check::at_least(
        "slln_diagnostic",
        "seeds out of 100 with |w_t/t| <= 4/√t at t=1000",
        inside as f64,
        99.0,
        1.0,
    ))
}

fn threshold_checks() -> Result<(Vec<Check>, ThresholdReport)> {
    let bounds = KernelBounds {
        alpha: 1.0,
        psi_star: 1.0,
    };
    let thr: Thresholds = thresholds(50, bounds)?;
    let expected = 0.02f64.sqrt();
    let err = (thr.sigma_flock_max - expected)
        .abs()
        .max((thr.sigma_nonflock_min.unwrap_or(f64::INFINITY) - expected).abs());

    // exponent signs flip exactly at the thresholds
    let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
    let mut mismatches = 0;
    for sigma in [0.05, 0.1, 0.2, 0.3] {
        let up = expected_growth_lower(1.0, 50, sigma, 1.0, &times)?.values;
        let down = expected_decay_upper_stated(1.0, 50, sigma, 1.0, &times)?.values;
        let increasing = up.windows(2).all(|w| w[1] > w[0]);
        let decreasing = down.windows(2).all(|w| w[1] < w[0]);
        if increasing != (sigma > expected) || decreasing != (sigma < expected) {
            mismatches += 1;
        }
    }
    let report = ThresholdReport {
        n: 50,
        alpha: 1.0,
        psi_star: 1.0,
        sigma_flock_max: thr.sigma_flock_max,
        sigma_nonflock_min: thr.sigma_nonflock_min,
    };
    Ok((
        vec![
            Check::at_most(
                "threshold_values",
                "|threshold − √(1/50)| for N=50, α=ψ*=1",
                err,
                1e-12,
                1e-12,
            ),
            Check::at_most(
                "bound_monotonicity",
                "noise levels where a bound's monotonicity disagrees with its threshold",
                mismatches as f64,
                0.0,
                0.0,
            ),
        ],
        report,
    ))
}

pub fn run_suite(opts: &VerifyOptions) -> Result<Report> {
    let mut checks = vec![row_sums(opts)?, contraction(opts)?, dispersion_identity(opts)?];
    checks.extend(conservation(opts)?);
    checks.extend(pathwise_exact(opts)?);
    checks.extend(domination(opts)?);
    checks.push(lognormal(opts)?);
    checks.push(noise_free(opts)?);
    checks.push(expected_decay(opts)?);
    checks.push(slln(opts)?);
    let (thr_checks, thresholds) = threshold_checks()?;
    checks.extend(thr_checks);
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(Report {
        seed: opts.seed,
        ito_correction: opts.ito_correction,
        checks,
        thresholds,
        all_passed,
    })
}
