//! CSV writers. Every file starts with `#` provenance lines followed by a
//! header row; numbers use `.` as decimal separator and shortest round-trip
//! formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flocking_core::ensemble::{EnsembleConfig, EnsembleResult};
use flocking_core::{SystemState, Trajectory};

use crate::presets::Preset;

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Everything needed to re-run the file's producer.
#[derive(Clone, Debug)]
pub struct Provenance<'a> {
    pub command: &'a str,
    pub preset: Option<Preset>,
    pub config: &'a EnsembleConfig,
}

impl Provenance<'_> {
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# flocking {} {}", env!("CARGO_PKG_VERSION"), self.command);
        if let Some(p) = self.preset {
            let _ = writeln!(
                s,
                "# preset: {} (reconstruction; dt and output grid are not given by the source)",
                p.name()
            );
        }
        let json = serde_json::to_string(self.config).expect("config serialises");
        let _ = writeln!(s, "# config: {json}");
        let _ = writeln!(
            s,
            "# seeds: base_seed={} streams=chacha8(base_seed, trial, init|noise)",
            self.config.base_seed
        );
        s
    }
}

pub fn trajectory_csv(prov: &Provenance<'_>, traj: &Trajectory, oracle: Option<&[f64]>) -> String {
    let mut s = prov.header();
    s.push_str("t,v2_centered,dispersion,max_pair_dist,w_t");
    if oracle.is_some() {
        s.push_str(",oracle_v2_exact");
    }
    s.push('\n');
    let g = &traj.diagnostics;
    for k in 0..traj.len() {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            num(traj.times[k]),
            num(g.v2_centered[k]),
            num(g.dispersion[k]),
            num(g.max_pair_dist[k]),
            num(g.w[k])
        );
        if let Some(o) = oracle {
            let _ = write!(s, ",{}", num(o[k]));
        }
        s.push('\n');
    }
    s
}

pub fn ensemble_csv(prov: &Provenance<'_>, res: &EnsembleResult) -> String {
    let mut s = prov.header();
    s.push_str("t,mean_dispersion,stderr_dispersion,mean_v2,stderr_v2,mean_pairdist,diverged_count\n");
    let a = &res.aggregates;
    let at = |v: &[f64], k: usize| v.get(k).copied().map_or_else(|| "nan".to_string(), num);
    for (k, t) in res.grid.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            num(*t),
            at(&a.dispersion.mean, k),
            at(&a.dispersion.stderr, k),
            at(&a.v2_centered.mean, k),
            at(&a.v2_centered.stderr, k),
            at(&a.mean_pair_dist.mean, k),
            res.diverged_count[k]
        );
    }
    s
}

/// One row per particle: position components, then velocity components.
pub fn snapshot_csv(prov: &Provenance<'_>, state: &SystemState) -> String {
    let mut s = prov.header();
    let _ = writeln!(s, "# t = {}", num(state.t()));
    let d = state.d();
    let cols: Vec<String> = (1..=d)
        .map(|k| format!("x{k}"))
        .chain((1..=d).map(|k| format!("v{k}")))
        .collect();
    s.push_str(&cols.join(","));
    s.push('\n');
    for i in 0..state.n() {
        let row: Vec<String> = state.position(i).iter().chain(state.velocity(i)).map(|x| num(*x)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{}.csv", num(t))
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
