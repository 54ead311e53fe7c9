//! Closed-form bounds and exact solutions for the common-noise system.
//!
//! All quantities refer to the centered frame (`Σ x_i = Σ v_i = 0`). Values
//! are computed in log space; anything beyond `f64::MAX` is saturated and the
//! affected sample indices are listed in [`TheoryBound::saturated`].
//!
//! Two decay rates are provided for the small-noise regime. The commonly
//! stated rate `Nσ² − ψ*`, and the rate that follows from
//! `Σ_{i,j}|v_i − v_j|² = 2N|v|²` for a constant kernel, `2N(Nσ² − c)`.
//! They share the sign threshold `σ² = ψ*/N` but differ by a factor `2N`;
//! comparisons against simulation use the second.

use serde::{Deserialize, Serialize};

use crate::brownian::{interpolate, BrownianPath};
use crate::error::{Error, Result};
use crate::model::KernelBounds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    PathwiseVUpper,
    PathwiseXUpper,
    ExpectedGrowthLower,
    ExpectedDecayUpperStated,
    ExpectedDecayExactConst,
    ExpectedXUpper,
    PathwiseVExactConst,
}

/// Inputs a bound was evaluated with. Unused fields are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: usize,
    pub sigma: f64,
    pub alpha: Option<f64>,
    pub psi_star: Option<f64>,
    pub v0_norm2: Option<f64>,
    pub x0_norm: Option<f64>,
    pub v0_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryBound {
    pub kind: BoundKind,
    pub params: BoundParams,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Indices whose value overflowed and was replaced by `f64::MAX`.
    pub saturated: Vec<usize>,
}

impl TheoryBound {
    pub fn is_saturated(&self) -> bool {
        !self.saturated.is_empty()
    }
}

fn check_common(n: usize, sigma: f64, times: &[f64]) -> Result<()> {
    if n < 2 {
        return Err(Error::config(format!("need N >= 2, got {n}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!("sigma must be >= 0 (got {sigma})")));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::config("bound times must be finite and >= 0"));
    }
    Ok(())
}

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and >= 0 (got {x})")))
    }
}

/// `scale · exp(exponent)` per sample, saturating on overflow.
fn exp_series(scale: f64, exponents: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<usize>) {
    let log_scale = scale.ln();
    let mut saturated = Vec::new();
    let values = exponents
        .enumerate()
        .map(|(k, e)| {
            let l = log_scale + e;
            if l > f64::MAX.ln() {
                saturated.push(k);
                f64::MAX
            } else {
                let direct = scale * e.exp();
                if direct.is_finite() {
                    direct
                } else {
                    l.exp()
                }
            }
        })
        .collect();
    (values, saturated)
}

fn path_values(path: &BrownianPath, times: &[f64]) -> Result<Vec<f64>> {
    if path.channels() != 1 {
        return Err(Error::mismatch("pathwise bounds need a single common Wiener channel"));
    }
    path.values_at(0, times)
}

/// `V(t) = |v(0)|² e^{−2Nσ w_t}`, an almost-sure upper bound on `|v(t)|²`.
pub fn pathwise_v_upper(
    v0_norm2: f64,
    n: usize,
    sigma: f64,
    path: &BrownianPath,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|v(0)|²", v0_norm2)?;
    let w = path_values(path, times)?;
    let rate = 2.0 * n as f64 * sigma;
    let (values, saturated) = exp_series(v0_norm2, w.iter().map(|w| -rate * w));
    Ok(TheoryBound {
        kind: BoundKind::PathwiseVUpper,
        params: BoundParams {
            n,
            sigma,
            v0_norm2: Some(v0_norm2),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `|x(0)| + |v(0)| ∫_0^t e^{−Nσ w_s} ds`, with the integral taken by the
/// trapezoidal rule on the path's step grid.
pub fn pathwise_x_upper(
    x0_norm: f64,
    v0_norm: f64,
    n: usize,
    sigma: f64,
    path: &BrownianPath,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|x(0)|", x0_norm)?;
    check_nonneg("|v(0)|", v0_norm)?;
    if path.channels() != 1 {
        return Err(Error::mismatch("pathwise bounds need a single common Wiener channel"));
    }
    let dt = path.dt();
    let rate = n as f64 * sigma;
    let w = path.cumulative(0);
    let integrand: Vec<f64> = w.iter().map(|w| (-rate * w).exp()).collect();
    let mut integral = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    integral.push(acc);
    for pair in integrand.windows(2) {
        acc += 0.5 * dt * (pair[0] + pair[1]);
        integral.push(acc);
    }
    let mut values = Vec::with_capacity(times.len());
    let mut saturated = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let w_t = interpolate(&w, dt, t)?;
        let j = ((t / dt).floor() as usize).min(w.len() - 1);
        let rest = t - j as f64 * dt;
        let mut int_t = integral[j];
        if rest > 1e-9 * dt && j + 1 < w.len() {
            int_t += 0.5 * rest * (integrand[j] + (-rate * w_t).exp());
        }
        let value = x0_norm + v0_norm * int_t;
        if value.is_finite() {
            values.push(value);
        } else {
            values.push(f64::MAX);
            saturated.push(k);
        }
    }
    Ok(TheoryBound {
        kind: BoundKind::PathwiseXUpper,
        params: BoundParams {
            n,
            sigma,
            x0_norm: Some(x0_norm),
            v0_norm: Some(v0_norm),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `E V_1(t) = |v(0)|² e^{2N(Nσ² − α)t}`, a lower bound on `E|v(t)|²`.
pub fn expected_growth_lower(
    v0_norm2: f64,
    n: usize,
    sigma: f64,
    alpha: f64,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|v(0)|²", v0_norm2)?;
    check_nonneg("alpha", alpha)?;
    let nf = n as f64;
    let rate = 2.0 * nf * (nf * sigma * sigma - alpha);
    let (values, saturated) = exp_series(v0_norm2, times.iter().map(|t| rate * t));
    Ok(TheoryBound {
        kind: BoundKind::ExpectedGrowthLower,
        params: BoundParams {
            n,
            sigma,
            alpha: Some(alpha),
            v0_norm2: Some(v0_norm2),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// Growth rate of [`expected_growth_lower`], `2N(Nσ² − α)`.
pub fn growth_rate(n: usize, sigma: f64, alpha: f64) -> f64 {
    let nf = n as f64;
    2.0 * nf * (nf * sigma * sigma - alpha)
}

/// The decay bound at the stated rate, `|v(0)|² e^{(Nσ² − ψ*)t}`.
pub fn expected_decay_upper_stated(
    v0_norm2: f64,
    n: usize,
    sigma: f64,
    psi_star: f64,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|v(0)|²", v0_norm2)?;
    check_nonneg("psi*", psi_star)?;
    let rate = n as f64 * sigma * sigma - psi_star;
    let (values, saturated) = exp_series(v0_norm2, times.iter().map(|t| rate * t));
    Ok(TheoryBound {
        kind: BoundKind::ExpectedDecayUpperStated,
        params: BoundParams {
            n,
            sigma,
            psi_star: Some(psi_star),
            v0_norm2: Some(v0_norm2),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `E|v(t)|² = |v(0)|² e^{2N(Nσ² − c)t}` for the constant kernel `ψ ≡ c`.
pub fn expected_decay_exact_const(
    v0_norm2: f64,
    n: usize,
    sigma: f64,
    psi_const: f64,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|v(0)|²", v0_norm2)?;
    check_nonneg("c", psi_const)?;
    let rate = growth_rate(n, sigma, psi_const);
    let (values, saturated) = exp_series(v0_norm2, times.iter().map(|t| rate * t));
    Ok(TheoryBound {
        kind: BoundKind::ExpectedDecayExactConst,
        params: BoundParams {
            n,
            sigma,
            psi_star: Some(psi_const),
            v0_norm2: Some(v0_norm2),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `|v(t)|² = |v(0)|² e^{−2Nct − 2Nσ w_t}` for the constant kernel `ψ ≡ c`.
pub fn pathwise_v_exact_const(
    v0_norm2: f64,
    n: usize,
    sigma: f64,
    psi_const: f64,
    path: &BrownianPath,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|v(0)|²", v0_norm2)?;
    check_nonneg("c", psi_const)?;
    let w = path_values(path, times)?;
    let nf = n as f64;
    let (values, saturated) = exp_series(
        v0_norm2,
        times
            .iter()
            .zip(&w)
            .map(|(t, w)| -2.0 * nf * psi_const * t - 2.0 * nf * sigma * w),
    );
    Ok(TheoryBound {
        kind: BoundKind::PathwiseVExactConst,
        params: BoundParams {
            n,
            sigma,
            psi_star: Some(psi_const),
            v0_norm2: Some(v0_norm2),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `|x(0)| + |v(0)| (2/λ)(e^{λt/2} − 1)` with `λ = (N − N²)σ² − ψ*`.
pub fn expected_x_upper(
    x0_norm: f64,
    v0_norm: f64,
    n: usize,
    sigma: f64,
    psi_star: f64,
    times: &[f64],
) -> Result<TheoryBound> {
    check_common(n, sigma, times)?;
    check_nonneg("|x(0)|", x0_norm)?;
    check_nonneg("|v(0)|", v0_norm)?;
    check_nonneg("psi*", psi_star)?;
    let lambda = expected_x_rate(n, sigma, psi_star);
    if lambda == 0.0 {
        return Err(Error::config("(N − N²)σ² − ψ* vanishes; the position bound is undefined"));
    }
    let mut saturated = Vec::new();
    let values = times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let v = x0_norm + v0_norm * (2.0 / lambda) * (0.5 * lambda * t).exp_m1();
            if v.is_finite() {
                v
            } else {
                saturated.push(k);
                f64::MAX
            }
        })
        .collect();
    Ok(TheoryBound {
        kind: BoundKind::ExpectedXUpper,
        params: BoundParams {
            n,
            sigma,
            psi_star: Some(psi_star),
            x0_norm: Some(x0_norm),
            v0_norm: Some(v0_norm),
            ..Default::default()
        },
        times: times.to_vec(),
        values,
        saturated,
    })
}

/// `(N − N²)σ² − ψ*`
pub fn expected_x_rate(n: usize, sigma: f64, psi_star: f64) -> f64 {
    let nf = n as f64;
    (nf - nf * nf) * sigma * sigma - psi_star
}

/// `t → ∞` limit of [`expected_x_upper`] when its rate is negative.
pub fn expected_x_limit(x0_norm: f64, v0_norm: f64, n: usize, sigma: f64, psi_star: f64) -> f64 {
    x0_norm - 2.0 * v0_norm / expected_x_rate(n, sigma, psi_star)
}

/// Noise levels separating guaranteed flocking from guaranteed non-flocking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `√(ψ*/N)`: flocking is guaranteed for `σ` strictly below.
    pub sigma_flock_max: f64,
    /// `√(α/N)`: flocking fails for `σ` strictly above. `None` when `α = ∞`,
    /// where no non-flocking guarantee exists.
    pub sigma_nonflock_min: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Flocking,
    NonFlocking,
    Indeterminate,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Flocking => "flocking regime",
            Regime::NonFlocking => "non-flocking regime",
            Regime::Indeterminate => "gap/indeterminate",
        }
    }
}

impl Thresholds {
    pub fn classify(&self, sigma: f64) -> Regime {
        if sigma < self.sigma_flock_max {
            Regime::Flocking
        } else if self.sigma_nonflock_min.is_some_and(|s| sigma > s) {
            Regime::NonFlocking
        } else {
            Regime::Indeterminate
        }
    }
}

pub fn thresholds(n: usize, bounds: KernelBounds) -> Result<Thresholds> {
    if n < 2 {
        return Err(Error::config(format!("need N >= 2, got {n}")));
    }
    let KernelBounds { alpha, psi_star } = bounds;
    if !(psi_star.is_finite() && psi_star >= 0.0) || alpha.is_nan() || alpha < psi_star {
        return Err(Error::config(format!(
            "kernel bounds must satisfy 0 <= psi* <= alpha (got psi*={psi_star}, alpha={alpha})"
        )));
    }
    let nf = n as f64;
    Ok(Thresholds {
        sigma_flock_max: (psi_star / nf).sqrt(),
        sigma_nonflock_min: alpha.is_finite().then(|| (alpha / nf).sqrt()),
    })
}
