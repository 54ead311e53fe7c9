//! Compact `--kernel` / `--noise` syntax.
//!
//! ```text
//! --kernel constant:1
//! --kernel rational:K,c,beta
//! --kernel singular:K,beta[,cap]      cap 0 = uncapped
//! --noise  none | common:SIGMA | additive:D | multiplicative:D,ve1,..,ved
//! ```
//!
//! Either flag also accepts the JSON form used in config files.

use anyhow::{anyhow, bail, Context, Result};
use flocking_core::{Kernel, NoiseModel};

fn split(spec: &str) -> (&str, Vec<&str>) {
    match spec.split_once(':') {
        Some((name, rest)) => (name.trim(), rest.split(',').map(str::trim).collect()),
        None => (spec.trim(), Vec::new()),
    }
}

fn numbers(args: &[&str], what: &str) -> Result<Vec<f64>> {
    args.iter()
        .map(|a| a.parse::<f64>().with_context(|| format!("{what}: '{a}' is not a number")))
        .collect()
}

pub fn parse_kernel(spec: &str) -> Result<Kernel> {
    if spec.trim_start().starts_with('{') {
        return serde_json::from_str(spec).context("kernel JSON");
    }
    let (name, args) = split(spec);
    let p = numbers(&args, "kernel")?;
    let kernel = match (name, p.as_slice()) {
        ("constant", [k]) => Kernel::constant(*k),
        ("rational", [k, c, beta]) => Kernel::rational(*k, *c, *beta),
        ("singular", [k, beta]) => Kernel::singular(*k, *beta),
        ("singular", [k, beta, cap]) => Kernel::Singular {
            k: *k,
            beta: *beta,
            cap: *cap,
        },
        ("constant" | "rational" | "singular", _) => {
            bail!("wrong number of parameters for '{name}' kernel: '{spec}'")
        }
        _ => bail!("unknown kernel '{name}' (expected constant, rational or singular)"),
    };
    kernel.validate().map_err(|e| anyhow!(e))?;
    Ok(kernel)
}

pub fn parse_noise(spec: &str) -> Result<NoiseModel> {
    if spec.trim_start().starts_with('{') {
        return serde_json::from_str(spec).context("noise JSON");
    }
    let (name, args) = split(spec);
    let p = numbers(&args, "noise")?;
    Ok(match (name, p.as_slice()) {
        ("none", []) => NoiseModel::None,
        ("common", [sigma]) => NoiseModel::common(*sigma),
        ("additive", [d]) => NoiseModel::AdditiveIndependent { diffusion: *d },
        ("multiplicative", [d, ve @ ..]) if !ve.is_empty() => NoiseModel::MultiplicativeVe {
            diffusion: *d,
            v_e: ve.to_vec(),
        },
        ("none" | "common" | "additive" | "multiplicative", _) => {
            bail!("wrong number of parameters for '{name}' noise: '{spec}'")
        }
        _ => bail!("unknown noise model '{name}' (expected none, common, additive or multiplicative)"),
    })
}
