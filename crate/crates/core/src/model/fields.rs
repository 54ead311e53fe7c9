//! Drift, diffusion and Itô-correction fields.
//!
//! Every field is returned as a row-major `n × d` array. The slice-level
//! `*_into` variants are what the integrators call; the owning wrappers exist
//! for callers that hold a [`SystemState`].

use super::{Kernel, ModelConfig, NoiseModel, SystemState};
use crate::error::{Error, Result};

/// Deterministic part of the vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct Drift {
    /// `dx_i = v_i`
    pub dx: Vec<f64>,
    /// `dv_i = λ Σ_j ψ(|x_j − x_i|)(v_j − v_i)`
    pub dv: Vec<f64>,
}

/// Alignment term `λ Σ_j ψ(|x_j − x_i|)(v_j − v_i)` written into `out`.
pub(crate) fn alignment_into(
    x: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    kernel: &Kernel,
    coupling: f64,
    out: &mut [f64],
) {
    out.fill(0.0);
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let vi = &v[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let xj = &x[j * d..(j + 1) * d];
            let s2: f64 = xi.iter().zip(xj).map(|(a, b)| (b - a) * (b - a)).sum();
            let w = kernel.eval_sq(s2);
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                let f = w * (v[j * d + k] - vi[k]);
                out[i * d + k] += f;
                out[j * d + k] -= f;
            }
        }
    }
    if coupling != 1.0 {
        out.iter_mut().for_each(|o| *o *= coupling);
    }
}

fn column_sums(v: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for row in v.chunks_exact(d) {
        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    s
}

/// `g_i = σ (S − n v_i)`, `S = Σ_j v_j`.
pub(crate) fn diffusion_common_into(v: &[f64], n: usize, d: usize, sigma: f64, out: &mut [f64]) {
    let sum = column_sums(v, d);
    let nf = n as f64;
    for (o_row, v_row) in out.chunks_exact_mut(d).zip(v.chunks_exact(d)) {
        for k in 0..d {
            o_row[k] = sigma * (sum[k] - nf * v_row[k]);
        }
    }
}

/// `c_i = (σ²/2)(n² v_i − n S)`.
pub(crate) fn ito_correction_common_into(v: &[f64], n: usize, d: usize, sigma: f64, out: &mut [f64]) {
    let sum = column_sums(v, d);
    let nf = n as f64;
    let half_s2 = 0.5 * sigma * sigma;
    for (o_row, v_row) in out.chunks_exact_mut(d).zip(v.chunks_exact(d)) {
        for k in 0..d {
            o_row[k] = half_s2 * (nf * nf * v_row[k] - nf * sum[k]);
        }
    }
}

fn check_finite(field: &[f64], what: &'static str) -> Result<()> {
    if field.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_shape(state: &SystemState, config: &ModelConfig) -> Result<()> {
    if state.n() != config.n || state.d() != config.d {
        return Err(Error::mismatch(format!(
            "state is {}x{}, config is {}x{}",
            state.n(),
            state.d(),
            config.n,
            config.d
        )));
    }
    Ok(())
}

/// Deterministic drift. No Itô correction is included.
pub fn drift(state: &SystemState, config: &ModelConfig) -> Result<Drift> {
    check_shape(state, config)?;
    let (n, d) = (state.n(), state.d());
    let mut dv = vec![0.0; n * d];
    alignment_into(
        state.positions(),
        state.velocities(),
        n,
        d,
        &config.kernel,
        config.coupling_scale,
        &mut dv,
    );
    check_finite(&dv, "drift")?;
    Ok(Drift {
        dx: state.velocities().to_vec(),
        dv,
    })
}

/// Diffusion field of the common-noise model, `σ Σ_j (v_j − v_i)`.
pub fn diffusion_common(state: &SystemState, sigma: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; state.velocities().len()];
    diffusion_common_into(state.velocities(), state.n(), state.d(), sigma, &mut g);
    check_finite(&g, "common diffusion")?;
    Ok(g)
}

/// Stratonovich-to-Itô drift correction of the common-noise model,
/// `½ (Dg) g = (σ²/2)(n² v_i − n Σ_j v_j)`.
pub fn ito_correction_common(state: &SystemState, sigma: f64) -> Result<Vec<f64>> {
    let mut c = vec![0.0; state.velocities().len()];
    ito_correction_common_into(state.velocities(), state.n(), state.d(), sigma, &mut c);
    check_finite(&c, "Ito correction")?;
    Ok(c)
}

/// Diffusion coefficients of the independent-noise models, row-major `n × d`.
///
/// * additive: entry `(i, k)` multiplies channel `i*d + k` and is `√D`;
/// * multiplicative: row `i` is `D (v_i − v_e)` and multiplies channel `i`.
pub fn diffusion_other(state: &SystemState, noise: &NoiseModel) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.velocities().len()];
    diffusion_other_into(state.velocities(), state.d(), noise, &mut out)?;
    check_finite(&out, "diffusion")?;
    Ok(out)
}

pub(crate) fn diffusion_other_into(v: &[f64], d: usize, noise: &NoiseModel, out: &mut [f64]) -> Result<()> {
    match noise {
        NoiseModel::AdditiveIndependent { diffusion } => {
            out.fill(diffusion.sqrt());
            Ok(())
        }
        NoiseModel::MultiplicativeVe { diffusion, v_e } => {
            if v_e.len() != d {
                return Err(Error::mismatch("v_e dimension"));
            }
            for (o_row, v_row) in out.chunks_exact_mut(d).zip(v.chunks_exact(d)) {
                for k in 0..d {
                    o_row[k] = diffusion * (v_row[k] - v_e[k]);
                }
            }
            Ok(())
        }
        other => Err(Error::config(format!(
            "diffusion_other applies to the independent-noise models, not {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(kernel: Kernel, n: usize, d: usize) -> ModelConfig {
        ModelConfig {
            kernel,
            noise: NoiseModel::None,
            coupling_scale: 1.0,
            n,
            d,
        }
    }

    fn pair_state() -> SystemState {
        SystemState::new(0.0, 2, 1, vec![0.0, 1.0], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn drift_two_particles() {
        let out = drift(&pair_state(), &cfg(Kernel::rational(1.0, 1.0, 1.0), 2, 1)).unwrap();
        assert_eq!(out.dv, vec![-1.0, 1.0]);
        assert_eq!(out.dx, vec![1.0, -1.0]);
    }

    #[test]
    fn drift_vanishes_for_equal_velocities_or_zero_kernel() {
        let s = SystemState::new(0.0, 3, 2, vec![0.0, 1.0, 2.0, 3.0, -1.0, 0.5], [0.3, -0.2].repeat(3)).unwrap();
        let dv = drift(&s, &cfg(Kernel::rational(1.0, 1.0, 0.25), 3, 2)).unwrap().dv;
        assert!(dv.iter().all(|&x| x == 0.0));
        let s = SystemState::new(0.0, 2, 1, vec![0.0, 1.0], vec![5.0, -3.0]).unwrap();
        let dv = drift(&s, &cfg(Kernel::constant(0.0), 2, 1)).unwrap().dv;
        assert_eq!(dv, vec![0.0, 0.0]);
    }

    #[test]
    fn drift_rejects_shape_mismatch() {
        assert!(drift(&pair_state(), &cfg(Kernel::constant(1.0), 3, 1)).is_err());
    }

    #[test]
    fn common_diffusion_examples() {
        assert_eq!(diffusion_common(&pair_state(), 0.5).unwrap(), vec![-1.0, 1.0]);
        let s = SystemState::new(0.0, 3, 1, vec![0.0; 3], vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(diffusion_common(&s, 1.0).unwrap(), vec![-3.0, 0.0, 3.0]);
        let s = SystemState::new(0.0, 3, 1, vec![0.0; 3], vec![2.0; 3]).unwrap();
        assert!(diffusion_common(&s, 1.0).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn correction_examples() {
        assert_eq!(ito_correction_common(&pair_state(), 0.5).unwrap(), vec![0.5, -0.5]);
        let s = SystemState::new(0.0, 2, 2, vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(ito_correction_common(&s, 0.7).unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn correction_equals_half_directional_derivative() {
        // g is linear in v, so (Dg)g = g(g) evaluated with v replaced by g.
        let s = SystemState::new(0.0, 4, 2, vec![0.0; 8], vec![0.3, -1.0, 2.0, 0.1, -0.4, 0.9, 1.1, -2.2]).unwrap();
        let sigma = 0.37;
        let g = diffusion_common(&s, sigma).unwrap();
        let gs = SystemState::new(0.0, 4, 2, vec![0.0; 8], g).unwrap();
        let dg_g = diffusion_common(&gs, sigma).unwrap();
        let c = ito_correction_common(&s, sigma).unwrap();
        for (a, b) in c.iter().zip(&dg_g) {
            assert_relative_eq!(*a, 0.5 * b, max_relative = 1e-13, epsilon = 1e-14);
        }
    }

    #[test]
    fn other_diffusion_examples() {
        let s = SystemState::new(0.0, 2, 2, vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let add = diffusion_other(&s, &NoiseModel::AdditiveIndependent { diffusion: 4.0 }).unwrap();
        assert_eq!(add, vec![2.0; 4]);

        let mult = NoiseModel::MultiplicativeVe {
            diffusion: 1.5,
            v_e: vec![1.0, 2.0],
        };
        let g = diffusion_other(&s, &mult).unwrap();
        assert_eq!(&g[..2], &[0.0, 0.0]);
        assert_eq!(&g[2..], &[3.0, 3.0]);

        let s1 = SystemState::new(0.0, 2, 1, vec![0.0; 2], vec![2.0, 0.0]).unwrap();
        let g = diffusion_other(&s1, &NoiseModel::MultiplicativeVe { diffusion: 1.0, v_e: vec![1.0] }).unwrap();
        assert_eq!(g[0], 1.0);

        assert!(diffusion_other(&s, &NoiseModel::None).is_err());
        assert!(diffusion_other(&s, &NoiseModel::common(0.1)).is_err());
    }

    fn arb_state() -> impl Strategy<Value = SystemState> {
        (2usize..7, 1usize..4).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(-3.0f64..3.0, n * d),
                prop::collection::vec(-3.0f64..3.0, n * d),
            )
                .prop_map(move |(x, v)| SystemState::new(0.0, n, d, x, v).unwrap())
        })
    }

    fn arb_kernel() -> impl Strategy<Value = Kernel> {
        prop_oneof![
            (0.1f64..3.0, 0.1f64..2.0, 0.0f64..2.0).prop_map(|(k, c, b)| Kernel::rational(k, c, b)),
            (0.1f64..3.0).prop_map(Kernel::constant),
            (0.1f64..3.0, 0.0f64..1.5, 0.01f64..0.5).prop_map(|(k, beta, cap)| Kernel::Singular { k, beta, cap }),
        ]
    }

    fn max_row_norm(field: &[f64], d: usize) -> f64 {
        field
            .chunks_exact(d)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn assert_rows_sum_to_zero(field: &[f64], d: usize) {
        let scale = max_row_norm(field, d).max(f64::MIN_POSITIVE);
        let mut sum = vec![0.0; d];
        for row in field.chunks_exact(d) {
            sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        for s in sum {
            assert!(s.abs() <= 1e-12 * scale, "row sum {s} vs scale {scale}");
        }
    }

    proptest! {
        #[test]
        fn row_sums_vanish(state in arb_state(), kernel in arb_kernel(), sigma in 0.01f64..2.0) {
            let d = state.d();
            let config = cfg(kernel, state.n(), d);
            assert_rows_sum_to_zero(&drift(&state, &config).unwrap().dv, d);
            assert_rows_sum_to_zero(&diffusion_common(&state, sigma).unwrap(), d);
            assert_rows_sum_to_zero(&ito_correction_common(&state, sigma).unwrap(), d);
        }

        #[test]
        fn pair_identity_in_centered_frame(state in arb_state()) {
            let (c, _) = super::super::center_frame(&state);
            let n = c.n();
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    pairs += c.velocity(i).iter().zip(c.velocity(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            }
            let norm2: f64 = c.velocities().iter().map(|x| x * x).sum();
            let rhs = 2.0 * n as f64 * norm2;
            prop_assert!((pairs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn drift_contraction_identity(state in arb_state(), kernel in arb_kernel()) {
            let (c, _) = super::super::center_frame(&state);
            let n = c.n();
            let dv = drift(&c, &cfg(kernel, n, c.d())).unwrap().dv;
            let lhs: f64 = 2.0 * c.velocities().iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>();
            let mut rhs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let s = c.position(i).iter().zip(c.position(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    let dv2: f64 = c.velocity(i).iter().zip(c.velocity(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    rhs -= kernel.eval(s).unwrap() * dv2;
                }
            }
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300), "{lhs} vs {rhs}");
        }

        #[test]
        fn ito_contraction_identity(state in arb_state(), sigma in 0.01f64..2.0) {
            // d|v|² picks up 2Σ<v_i, c_i> from the correction and Σ|g_i|² from
            // the quadratic variation; together they give 2n²σ²|v|².
            let (c, _) = super::super::center_frame(&state);
            let n = c.n() as f64;
            let corr = ito_correction_common(&c, sigma).unwrap();
            let g = diffusion_common(&c, sigma).unwrap();
            let v = c.velocities();
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            let two_vc: f64 = 2.0 * v.iter().zip(&corr).map(|(a, b)| a * b).sum::<f64>();
            let g2: f64 = g.iter().map(|x| x * x).sum();
            let target = 2.0 * n * n * sigma * sigma * norm2;
            prop_assert!((two_vc + g2 - target).abs() <= 1e-10 * target.max(1e-300));
            prop_assert!((two_vc - 0.5 * target).abs() <= 1e-10 * target.max(1e-300));
        }

        #[test]
        fn permutation_equivariance(state in arb_state(), kernel in arb_kernel(), sigma in 0.01f64..2.0, rot in 0usize..7) {
            let n = state.n();
            let d = state.d();
            let perm: Vec<usize> = (0..n).map(|k| (k + rot) % n).rev().collect();
            let p = state.permuted(&perm).unwrap();
            let config = cfg(kernel, n, d);
            let fields = |s: &SystemState| {
                (
                    drift(s, &config).unwrap().dv,
                    diffusion_common(s, sigma).unwrap(),
                    ito_correction_common(s, sigma).unwrap(),
                )
            };
            let (a0, b0, c0) = fields(&state);
            let (a1, b1, c1) = fields(&p);
            for (orig, permuted) in [(a0, a1), (b0, b1), (c0, c1)] {
                let scale = max_row_norm(&orig, d).max(1e-300);
                for (k, &src) in perm.iter().enumerate() {
                    for m in 0..d {
                        prop_assert!((permuted[k * d + m] - orig[src * d + m]).abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }
}
