//! `flocking` command-line front end.

pub mod output;
pub mod presets;
pub mod spec;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flocking_core::brownian::BrownianPath;
use flocking_core::ensemble::{persist, EnsembleConfig, InitSpec};
use flocking_core::metrics::{classify_flocking, EnsembleDiagnostics, Margins, Window};
use flocking_core::oracles::{pathwise_v_exact_const, thresholds, Regime};
use flocking_core::{
    run_ensemble, simulate_on_path, Error as CoreError, NoiseModel, OutputGrid, Purpose, StepScheme,
};

use crate::output::Provenance;
use crate::presets::Preset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flocking", version, about = "Stochastic Cucker-Smale flocking under common noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write trajectory.csv
    Simulate(SimulateArgs),
    /// Run a Monte Carlo ensemble and write ensemble.csv / ensemble.json
    Ensemble(RunArgs),
    /// Run the invariant and oracle suite and write verify_report.json
    Verify(VerifyArgs),
    /// Print the noise thresholds of the configured kernel and classify σ
    Thresholds(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Em,
    Heun,
    Deterministic,
}

impl From<SchemeArg> for StepScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Em => StepScheme::EulerMaruyamaIto,
            SchemeArg::Heun => StepScheme::EulerHeunStratonovich,
            SchemeArg::Deterministic => StepScheme::DeterministicEuler,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// JSON file mirroring the ensemble configuration
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_name = "F")]
    pub dt: Option<f64>,
    /// Time horizon
    #[arg(long = "T", value_name = "F")]
    pub horizon: Option<f64>,
    /// Common-noise intensity (switches the noise model to common)
    #[arg(long, value_name = "F")]
    pub sigma: Option<f64>,
    /// constant:K | rational:K,c,beta | singular:K,beta[,cap]
    #[arg(long, value_name = "SPEC")]
    pub kernel: Option<String>,
    /// none | common:SIGMA | additive:D | multiplicative:D,ve1,..
    #[arg(long, value_name = "SPEC")]
    pub noise: Option<String>,
    #[arg(long, value_name = "F")]
    pub coupling: Option<f64>,
    /// Number of particles
    #[arg(long = "particles", value_name = "N")]
    pub n: Option<usize>,
    /// Spatial dimension
    #[arg(long = "dim", value_name = "D")]
    pub d: Option<usize>,
    /// Time between output samples
    #[arg(long, value_name = "F")]
    pub output_every: Option<f64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Start every trial from trial 0's initial state
    #[arg(long)]
    pub fixed_init: bool,
    /// Worker threads for ensembles (default: all cores)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Add the constant-kernel pathwise closed form, evaluated on the same path
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Clone, Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    /// Trials of the in-expectation check
    #[arg(long, value_name = "N", default_value_t = 1000)]
    pub trials: usize,
    /// Negative control: integrate the common-noise model without its Itô correction
    #[arg(long)]
    pub no_ito_correction: bool,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Configuration after applying `--config`/`--preset` and every override flag.
pub fn effective_config(args: &RunArgs) -> Result<(EnsembleConfig, Option<Preset>)> {
    let mut cfg = if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        args.preset.map_or_else(presets::desk, Preset::config)
    };
    apply_overrides(&mut cfg, args).map_err(|e| usage(e.to_string()))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, args.preset))
}

fn apply_overrides(cfg: &mut EnsembleConfig, args: &RunArgs) -> Result<()> {
    if let Some(n) = args.n {
        cfg.model.n = n;
    }
    if let Some(d) = args.d {
        if d != cfg.model.d {
            cfg.init = match &cfg.init {
                InitSpec::UniformBox {
                    x_low,
                    x_high,
                    v_low,
                    v_high,
                } => {
                    let same = |v: &[f64]| v.iter().all(|x| *x == v[0]);
                    if !(same(x_low) && same(x_high) && same(v_low) && same(v_high)) {
                        bail!("--dim cannot resize a box with per-coordinate bounds");
                    }
                    InitSpec::UniformBox {
                        x_low: vec![x_low[0]; d],
                        x_high: vec![x_high[0]; d],
                        v_low: vec![v_low[0]; d],
                        v_high: vec![v_high[0]; d],
                    }
                }
                InitSpec::Explicit { .. } => bail!("--dim conflicts with an explicit initial state"),
            };
            cfg.model.d = d;
        }
    }
    if let Some(dt) = args.dt {
        if !(dt.is_finite() && dt > 0.0) {
            bail!("--dt must be > 0");
        }
        if let OutputGrid::Every(k) = cfg.output {
            let interval = k as f64 * cfg.dt;
            cfg.output = OutputGrid::Every(((interval / dt).round() as usize).max(1));
        }
        cfg.dt = dt;
    }
    if let Some(every) = args.output_every {
        let k = every / cfg.dt;
        if !(k >= 0.5 && (k - k.round()).abs() < 1e-6 * k) {
            bail!("--output-every {every} is not a whole number of steps of {}", cfg.dt);
        }
        cfg.output = OutputGrid::Every(k.round() as usize);
    }
    if let Some(t) = args.horizon {
        cfg.horizon = t;
        cfg.snapshot_times.retain(|&s| s <= t + 1e-12);
    }
    if let Some(trials) = args.trials {
        cfg.n_trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(spec) = &args.noise {
        cfg.model.noise = spec::parse_noise(spec)?;
    }
    if let Some(sigma) = args.sigma {
        cfg.model.noise = NoiseModel::common(sigma);
    }
    if let Some(spec) = &args.kernel {
        cfg.model.kernel = spec::parse_kernel(spec)?;
    }
    if let Some(c) = args.coupling {
        cfg.model.coupling_scale = c;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s.into();
    }
    if args.fixed_init {
        cfg.fixed_init = true;
    }
    if args.threads.is_some() {
        cfg.parallelism = args.threads;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::BlowUp { .. }) => EXIT_BLOW_UP,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Ensemble(a) => cmd_ensemble(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Thresholds(a) => cmd_thresholds(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let (cfg, preset) = effective_config(&args.run)?;
    let init = cfg.initial_state(0)?;
    let mut settings = cfg.settings();
    settings.keep_snapshots = !cfg.snapshot_times.is_empty();
    let steps = settings.steps()?;
    let key = cfg.trial_key(0, Purpose::Noise);
    let path = BrownianPath::generate(key, cfg.dt, steps, cfg.model.layout())?;
    let traj = match simulate_on_path(&cfg.model, &init, cfg.scheme, &settings, &path) {
        Ok(t) => t,
        Err(CoreError::BlowUp { step, time }) => {
            eprintln!("blow-up: state became non-finite at step {step} (t = {time})");
            return Ok(EXIT_BLOW_UP);
        }
        Err(e) => return Err(usage(e.to_string())),
    };

    let oracle = if args.oracle {
        let c = cfg
            .model
            .kernel
            .constant_value()
            .ok_or_else(|| usage("--oracle needs a constant kernel"))?;
        let sigma = cfg
            .model
            .noise
            .common_sigma()
            .ok_or_else(|| usage("--oracle needs common noise"))?;
        let v0 = traj.diagnostics.v2_centered[0];
        let b = pathwise_v_exact_const(v0, cfg.model.n, sigma, c * cfg.model.coupling_scale, &path, &traj.times)?;
        Some(b.values)
    } else {
        None
    };

    let prov = Provenance {
        command: "simulate",
        preset,
        config: &cfg,
    };
    let file = output::write(&args.run.out, "trajectory.csv", &output::trajectory_csv(&prov, &traj, oracle.as_deref()))?;
    println!("wrote {}", file.display());
    if settings.keep_snapshots {
        for &t in &cfg.snapshot_times {
            let k = traj
                .times
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
                .ok_or_else(|| usage(format!("snapshot time {t} is not an output time")))?;
            let f = output::write(&args.run.out, &output::snapshot_name(t), &output::snapshot_csv(&prov, &traj.snapshots[k]))?;
            println!("wrote {}", f.display());
        }
    }
    if let Some(o) = &oracle {
        let gap = traj
            .diagnostics
            .v2_centered
            .iter()
            .zip(o)
            .map(|(s, e)| (s.ln() - e.ln()).abs())
            .fold(0.0, f64::max);
        println!("max |log v2 - log oracle| = {gap:.3e}");
    }
    let g = &traj.diagnostics;
    println!(
        "dispersion: {} -> {}",
        output::num(g.dispersion[0]),
        output::num(*g.dispersion.last().unwrap())
    );
    Ok(EXIT_OK)
}

pub fn cmd_ensemble(args: &RunArgs) -> Result<i32> {
    let (cfg, preset) = effective_config(args)?;
    let res = run_ensemble(&cfg).map_err(|e| usage(e.to_string()))?;
    let prov = Provenance {
        command: "ensemble",
        preset,
        config: &cfg,
    };
    let csv = output::write(&args.out, "ensemble.csv", &output::ensemble_csv(&prov, &res))?;
    fs::create_dir_all(&args.out)?;
    let json = args.out.join("ensemble.json");
    persist(&res, &json).with_context(|| format!("writing {}", json.display()))?;
    println!("wrote {}", csv.display());
    println!("wrote {}", json.display());
    for s in &res.snapshots {
        let f = output::write(&args.out, &output::snapshot_name(s.t()), &output::snapshot_csv(&prov, s))?;
        println!("wrote {}", f.display());
    }
    println!(
        "trials: {} used, {} diverged",
        res.trials_used(),
        res.diverged.len()
    );
    if res.empty_aggregate {
        println!("every trial diverged; aggregates are empty");
        return Ok(EXIT_OK);
    }
    let diag = EnsembleDiagnostics {
        times: &res.grid,
        mean_dispersion: &res.aggregates.dispersion.mean,
        mean_pair_distance: &res.aggregates.mean_pair_dist.mean,
        diverged_trials: res.diverged.len(),
    };
    match classify_flocking(&diag, Window::default(), Margins::default()) {
        Ok(v) => {
            println!(
                "verdict: velocity_alignment={:?} group_forming={:?}",
                v.velocity_alignment, v.group_forming
            );
            output::write(&args.out, "verdict.json", &(serde_json::to_string_pretty(&v)? + "\n"))?;
        }
        Err(e) => println!("verdict: unavailable ({e})"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let opts = verify::VerifyOptions {
        seed: args.seed,
        trials: args.trials,
        ito_correction: !args.no_ito_correction,
        threads: args.threads,
    };
    let report = verify::run_suite(&opts)?;
    for c in &report.checks {
        let op = if c.at_least { ">=" } else { "<=" };
        println!(
            "{} {:<28} {:>12} {op} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            format!("{:.4e}", c.measured),
            output::num(c.bound)
        );
    }
    let t = &report.thresholds;
    println!(
        "thresholds (N={}, alpha={}, psi*={}): sigma_flock_max = {:.5}, sigma_nonflock_min = {}",
        t.n,
        t.alpha,
        t.psi_star,
        t.sigma_flock_max,
        t.sigma_nonflock_min.map_or("n/a".into(), |s| format!("{s:.5}"))
    );
    let path = write_report(&args.out, &report)?;
    println!("wrote {}", path.display());
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("verification failed: {}", failed.join(", "));
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn write_report(dir: &Path, report: &verify::Report) -> Result<PathBuf> {
    output::write(dir, "verify_report.json", &(serde_json::to_string_pretty(report)? + "\n"))
}

pub fn cmd_thresholds(args: &RunArgs) -> Result<i32> {
    let (cfg, _) = effective_config(args)?;
    let mut bounds = cfg.model.kernel.bounds();
    bounds.alpha *= cfg.model.coupling_scale;
    bounds.psi_star *= cfg.model.coupling_scale;
    let thr = thresholds(cfg.model.n, bounds).map_err(|e| usage(e.to_string()))?;
    println!("N = {}", cfg.model.n);
    println!("alpha = sup psi = {}", bounds.alpha);
    println!("psi* = inf psi = {}", bounds.psi_star);
    println!("sigma_flock_max = sqrt(psi*/N) = {}", thr.sigma_flock_max);
    match thr.sigma_nonflock_min {
        Some(s) => println!("sigma_nonflock_min = sqrt(alpha/N) = {s}"),
        None => println!(
            "sigma_nonflock_min = n/a: the kernel is unbounded (alpha = inf), so the non-flocking \
             guarantee does not apply; give the singular kernel a positive cap to use it"
        ),
    }
    match cfg.model.noise.common_sigma() {
        Some(sigma) => {
            let regime = thr.classify(sigma);
            println!("sigma = {sigma}: {}", regime.label());
            if regime == Regime::Indeterminate && thr.sigma_nonflock_min.is_none() && sigma >= thr.sigma_flock_max {
                println!("(no non-flocking threshold exists for this kernel)");
            }
        }
        None => println!("noise model has no common sigma; nothing to classify"),
    }
    Ok(EXIT_OK)
}
