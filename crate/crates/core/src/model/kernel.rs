//! Communication rates ψ(s) and their global bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp radius for the singular kernel.
pub const DEFAULT_SINGULAR_CAP: f64 = 1e-6;

fn default_cap() -> f64 {
    DEFAULT_SINGULAR_CAP
}

/// Communication rate between two particles as a function of their distance.
///
/// All three families are evaluated from the *squared* distance internally so
/// the pairwise loops never take a square root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// `K / (c + s²)^β`
    Rational { k: f64, c: f64, beta: f64 },
    /// `K / max(s, cap)^(2β)`. A cap of zero leaves the kernel unbounded at the origin.
    Singular {
        k: f64,
        beta: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `K` for every distance.
    Constant { k: f64 },
}

/// Supremum and infimum of a kernel over `[0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    /// `sup ψ`; `+∞` for an uncapped singular kernel.
    pub alpha: f64,
    /// `inf ψ`
    pub psi_star: f64,
}

impl Kernel {
    pub fn rational(k: f64, c: f64, beta: f64) -> Self {
        Kernel::Rational { k, c, beta }
    }

    pub fn singular(k: f64, beta: f64) -> Self {
        Kernel::Singular {
            k,
            beta,
            cap: DEFAULT_SINGULAR_CAP,
        }
    }

    pub fn constant(k: f64) -> Self {
        Kernel::Constant { k }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match *self {
            Kernel::Rational { k, c, beta } => {
                if !(ok(k) && ok(beta) && c.is_finite() && c > 0.0) {
                    return Err(Error::config(format!(
                        "rational kernel needs K >= 0, c > 0, beta >= 0 (got K={k}, c={c}, beta={beta})"
                    )));
                }
            }
            Kernel::Singular { k, beta, cap } => {
                if !(ok(k) && ok(beta) && ok(cap)) {
                    return Err(Error::config(format!(
                        "singular kernel needs K >= 0, beta >= 0, cap >= 0 (got K={k}, beta={beta}, cap={cap})"
                    )));
                }
            }
            Kernel::Constant { k } => {
                if !ok(k) {
                    return Err(Error::config(format!("constant kernel needs K >= 0 (got {k})")));
                }
            }
        }
        Ok(())
    }

    /// ψ(s) for a distance `s >= 0`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::NonFinite("kernel argument"));
        }
        if s < 0.0 {
            return Err(Error::InvalidState(format!("negative distance {s}")));
        }
        let value = self.eval_sq(s * s);
        if !value.is_finite() {
            return Err(Error::NonFinite("kernel value"));
        }
        Ok(value)
    }

    /// ψ evaluated at the distance whose square is `s2`. No argument checks.
    #[inline]
    pub fn eval_sq(&self, s2: f64) -> f64 {
        match *self {
            Kernel::Rational { k, c, beta } => {
                if beta == 0.0 {
                    k
                } else if beta == 0.25 {
                    k / (c + s2).sqrt().sqrt()
                } else if beta == 0.5 {
                    k / (c + s2).sqrt()
                } else if beta == 1.0 {
                    k / (c + s2)
                } else {
                    k * (c + s2).powf(-beta)
                }
            }
            Kernel::Singular { k, beta, cap } => {
                if beta == 0.0 {
                    return k;
                }
                let s2 = s2.max(cap * cap);
                k * s2.powf(-beta)
            }
            Kernel::Constant { k } => k,
        }
    }

    pub fn bounds(&self) -> KernelBounds {
        match *self {
            Kernel::Rational { k, c, beta } => {
                let alpha = k * c.powf(-beta);
                let psi_star = if beta == 0.0 { alpha } else { 0.0 };
                KernelBounds { alpha, psi_star }
            }
            Kernel::Singular { k, beta, cap } => {
                if beta == 0.0 {
                    return KernelBounds {
                        alpha: k,
                        psi_star: k,
                    };
                }
                let alpha = if cap > 0.0 {
                    k * cap.powf(-2.0 * beta)
                } else {
                    f64::INFINITY
                };
                KernelBounds {
                    alpha,
                    psi_star: 0.0,
                }
            }
            Kernel::Constant { k } => KernelBounds {
                alpha: k,
                psi_star: k,
            },
        }
    }

    /// The constant value if ψ does not depend on distance.
    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Kernel::Constant { k } => Some(k),
            Kernel::Rational { k, c, beta } if beta == 0.0 => Some(k * c.powf(-beta)),
            Kernel::Singular { k, beta, .. } if beta == 0.0 => Some(k),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rational_at_origin() {
        let psi = Kernel::rational(1.0, 1.0, 0.25);
        assert_eq!(psi.eval(0.0).unwrap(), 1.0);
    }

    #[test]
    fn constant_everywhere() {
        let psi = Kernel::constant(1.0);
        for s in [0.0, 0.3, 10.0, 1e9] {
            assert_eq!(psi.eval(s).unwrap(), 1.0);
        }
    }

    #[test]
    fn rational_at_sqrt3() {
        // (1 + 3)^0.25 = sqrt(2)
        let psi = Kernel::rational(1.0, 1.0, 0.25);
        assert_relative_eq!(
            psi.eval(3f64.sqrt()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn general_beta_matches_powf() {
        let psi = Kernel::rational(2.0, 0.5, 0.7);
        let s = 1.3f64;
        assert_relative_eq!(
            psi.eval(s).unwrap(),
            2.0 / (0.5 + s * s).powf(0.7),
            max_relative = 1e-14
        );
    }

    #[test]
    fn singular_is_clamped_below_cap() {
        let psi = Kernel::Singular {
            k: 1.0,
            beta: 0.5,
            cap: 0.1,
        };
        let at_cap = psi.eval(0.1).unwrap();
        assert_relative_eq!(at_cap, 10.0, max_relative = 1e-12);
        assert_eq!(psi.eval(0.0).unwrap(), at_cap);
        assert_eq!(psi.eval(0.05).unwrap(), at_cap);
        assert_relative_eq!(psi.eval(2.0).unwrap(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn uncapped_singular_is_infinite_at_origin() {
        let psi = Kernel::Singular {
            k: 1.0,
            beta: 0.5,
            cap: 0.0,
        };
        assert!(matches!(psi.eval(0.0), Err(Error::NonFinite(_))));
        assert_eq!(psi.bounds().alpha, f64::INFINITY);
    }

    #[test]
    fn rejects_bad_arguments() {
        let psi = Kernel::constant(1.0);
        assert!(psi.eval(f64::NAN).is_err());
        assert!(psi.eval(f64::INFINITY).is_err());
        assert!(psi.eval(-1.0).is_err());
        assert!(Kernel::rational(1.0, 0.0, 1.0).validate().is_err());
        assert!(Kernel::rational(1.0, 1.0, -1.0).validate().is_err());
    }

    #[test]
    fn bounds_per_family() {
        assert_eq!(
            Kernel::rational(1.0, 1.0, 0.25).bounds(),
            KernelBounds {
                alpha: 1.0,
                psi_star: 0.0
            }
        );
        assert_eq!(
            Kernel::constant(2.0).bounds(),
            KernelBounds {
                alpha: 2.0,
                psi_star: 2.0
            }
        );
        let b = Kernel::rational(3.0, 4.0, 0.5).bounds();
        assert_relative_eq!(b.alpha, 1.5);
    }

    #[test]
    fn monotone_on_grid() {
        let kernels = [
            Kernel::rational(1.0, 1.0, 0.25),
            Kernel::rational(2.0, 0.1, 1.5),
            Kernel::constant(0.7),
            Kernel::Singular {
                k: 1.0,
                beta: 0.8,
                cap: 0.2,
            },
        ];
        for psi in kernels {
            let mut prev = f64::INFINITY;
            for i in 0..2000 {
                let s = i as f64 * 0.005;
                let v = psi.eval(s).unwrap();
                assert!(v >= 0.0);
                assert!(v <= prev, "{psi:?} increases at s={s}");
                prev = v;
            }
        }
    }

    #[test]
    fn serde_shape() {
        let json = serde_json::to_string(&Kernel::rational(1.0, 1.0, 0.25)).unwrap();
        assert_eq!(json, r#"{"type":"rational","k":1.0,"c":1.0,"beta":0.25}"#);
        let k: Kernel = serde_json::from_str(r#"{"type":"singular","k":1.0,"beta":0.5}"#).unwrap();
        assert_eq!(k, Kernel::singular(1.0, 0.5));
    }
}
