//! Cutoff functions and their application to data and coefficients.
//!
//! A cutoff is identically 1 on the ball of its plateau radius `R`,
//! vanishes outside its support radius `R + 3`, and decays radially in
//! between. Second-order coefficient entries receive a factor `zeta^2`,
//! everything else a single factor `zeta`; with that convention the
//! truncation of discrete coefficients induces exactly the truncation
//! of the continuous data they are compatible with.

use crate::problem::{ChannelFn, ContinuousData, DiscreteCoeffs, EntryFn, ScalarFn};
use std::f64::consts::{FRAC_2_PI, PI};
use std::sync::Arc;

/// Profile used between the plateau and the support boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffFlavor {
    /// The mollified-indicator seam built from `(2/pi) atan exp(x / (1 - x^2))`,
    /// exact in one dimension; higher dimensions fall back to the radial
    /// smoothstep profile.
    ArctanBump,
    /// Radial quintic smoothstep `6t^5 - 15t^4 + 10t^3`, any dimension.
    Smoothstep,
    /// `zeta == 1` everywhere (infinite plateau); leaves data untouched.
    Identity,
}

impl std::str::FromStr for CutoffFlavor {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "arctan" | "arctan-bump" => Ok(Self::ArctanBump),
            "smoothstep" => Ok(Self::Smoothstep),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(format!("unknown cutoff flavor `{other}`")),
        }
    }
}

/// Width of the decay region; the support radius is `R + SEAM_WIDTH`.
pub const SEAM_WIDTH: f64 = 3.0;

/// A smooth cutoff with plateau radius `r` and support radius `r + 3`.
#[derive(Debug, Clone)]
pub struct CutoffFn {
    r: f64,
    flavor: CutoffFlavor,
}

/// Seam helper of the 1D arctan profile: `(2/pi) atan exp(x/(1-x^2))`
/// for `|x| < 1`, the indicator of `[1, inf)` otherwise.
fn seam(x: f64) -> f64 {
    if x <= -1.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        FRAC_2_PI * (x / (1.0 - x * x)).exp().atan()
    }
}

/// Derivative of [`seam`]; zero outside `(-1, 1)`.
fn seam_derivative(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let u = x / (1.0 - x * x);
    let du = (1.0 + x * x) / ((1.0 - x * x) * (1.0 - x * x));
    let e = u.exp();
    if !e.is_finite() {
        return 0.0;
    }
    2.0 / PI * e / (1.0 + e * e) * du
}

fn smoothstep01(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (6.0 * t * t - 15.0 * t + 10.0)
    }
}

fn smoothstep01_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (t - 1.0) * (t - 1.0)
    }
}

impl CutoffFn {
    /// The worked example's 1D cutoff `zeta_R(x) = seam(x+2+R) - seam(x-2-R)`.
    pub fn arctan_bump(r: f64) -> Self {
        assert!(r > 0.0, "plateau radius must be positive");
        Self {
            r,
            flavor: CutoffFlavor::ArctanBump,
        }
    }

    /// Radial quintic smoothstep, valid in any dimension.
    pub fn smoothstep(r: f64) -> Self {
        assert!(r > 0.0, "plateau radius must be positive");
        Self {
            r,
            flavor: CutoffFlavor::Smoothstep,
        }
    }

    /// The trivial cutoff `zeta == 1` (infinite plateau radius).
    pub fn identity() -> Self {
        Self {
            r: f64::INFINITY,
            flavor: CutoffFlavor::Identity,
        }
    }

    pub fn with_flavor(flavor: CutoffFlavor, r: f64) -> Self {
        match flavor {
            CutoffFlavor::ArctanBump => Self::arctan_bump(r),
            CutoffFlavor::Smoothstep => Self::smoothstep(r),
            CutoffFlavor::Identity => Self::identity(),
        }
    }

    pub fn flavor(&self) -> CutoffFlavor {
        self.flavor
    }

    /// Plateau radius `R`: `zeta == 1` exactly for `|x| <= R`.
    pub fn plateau_radius(&self) -> f64 {
        self.r
    }

    /// Radius beyond which `zeta == 0` exactly.
    pub fn support_radius(&self) -> f64 {
        match self.flavor {
            CutoffFlavor::Identity => f64::INFINITY,
            _ => self.r + SEAM_WIDTH,
        }
    }

    /// Evaluates along the 1D axis (or at signed radius `x`).
    pub fn eval1(&self, x: f64) -> f64 {
        match self.flavor {
            CutoffFlavor::Identity => 1.0,
            CutoffFlavor::ArctanBump => {
                // Piecewise: return the constant branch on the plateau
                // and outside the support, so those regions are exact.
                if x.abs() <= self.r + 1.0 {
                    1.0
                } else if x.abs() >= self.r + SEAM_WIDTH {
                    0.0
                } else {
                    seam(x + 2.0 + self.r) - seam(x - 2.0 - self.r)
                }
            }
            CutoffFlavor::Smoothstep => {
                let s = x.abs();
                if s <= self.r {
                    1.0
                } else if s >= self.r + SEAM_WIDTH {
                    0.0
                } else {
                    1.0 - smoothstep01((s - self.r) / SEAM_WIDTH)
                }
            }
        }
    }

    /// Evaluates at a point of any dimension. The arctan flavor only has
    /// its exact seam formula in 1D; for `d > 1` the radial smoothstep
    /// profile is applied to `|x|` instead.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.len() == 1 {
            return self.eval1(x[0]);
        }
        match self.flavor {
            CutoffFlavor::Identity => 1.0,
            _ => {
                let s = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if s <= self.r {
                    1.0
                } else if s >= self.r + SEAM_WIDTH {
                    0.0
                } else {
                    1.0 - smoothstep01((s - self.r) / SEAM_WIDTH)
                }
            }
        }
    }

    /// d/dx of the 1D profile.
    pub fn derivative1(&self, x: f64) -> f64 {
        match self.flavor {
            CutoffFlavor::Identity => 0.0,
            CutoffFlavor::ArctanBump => {
                if x.abs() <= self.r + 1.0 || x.abs() >= self.r + SEAM_WIDTH {
                    0.0
                } else {
                    seam_derivative(x + 2.0 + self.r) - seam_derivative(x - 2.0 - self.r)
                }
            }
            CutoffFlavor::Smoothstep => {
                let s = x.abs();
                if s <= self.r || s >= self.r + SEAM_WIDTH {
                    0.0
                } else {
                    -smoothstep01_derivative((s - self.r) / SEAM_WIDTH) / SEAM_WIDTH * x.signum()
                }
            }
        }
    }

    /// True when `x` lies strictly outside the support.
    pub fn outside_support(&self, x: &[f64]) -> bool {
        match self.flavor {
            CutoffFlavor::Identity => false,
            _ => {
                let n2: f64 = x.iter().map(|v| v * v).sum();
                let s = self.support_radius();
                n2 > s * s
            }
        }
    }
}

/// Truncated data `(zeta psi, zeta f, zeta g^k)`: pointwise products,
/// exact zeros outside the support (the data closures are not even
/// evaluated there).
pub fn apply_to_data(
    zeta: &CutoffFn,
    psi: &ScalarFn,
    f: &ScalarFn,
    g: &ChannelFn,
) -> (ScalarFn, ScalarFn, ChannelFn) {
    let (za, zb, zc) = (zeta.clone(), zeta.clone(), zeta.clone());
    let (psi, f, g) = (psi.clone(), f.clone(), g.clone());
    let psi_r: ScalarFn = Arc::new(move |t, x| {
        let z = za.eval(x);
        if z == 0.0 {
            0.0
        } else {
            z * psi(t, x)
        }
    });
    let f_r: ScalarFn = Arc::new(move |t, x| {
        let z = zb.eval(x);
        if z == 0.0 {
            0.0
        } else {
            z * f(t, x)
        }
    });
    let g_r: ChannelFn = Arc::new(move |t, x, k| {
        let z = zc.eval(x);
        if z == 0.0 {
            0.0
        } else {
            z * g(t, x, k)
        }
    });
    (psi_r, f_r, g_r)
}

/// Truncated discrete coefficients: `zeta^2` on purely second-order
/// entries (both stencil indices nonzero), a single `zeta` on every
/// other entry of `fra` and on all of `frb`. The zero-order entry
/// `fra(0,0)` housing `c` therefore receives one factor of `zeta`,
/// which keeps the induced continuous truncation consistent.
pub fn apply_to_coeffs(zeta: &CutoffFn, dc: &DiscreteCoeffs) -> DiscreteCoeffs {
    let (za, zb) = (zeta.clone(), zeta.clone());
    let fra = dc.fra_fn();
    let frb = dc.frb_fn();
    dc.with_coeffs(
        Arc::new(move |t, x, l, k| {
            let z = za.eval(x);
            if z == 0.0 {
                return 0.0;
            }
            let factor = if l != 0 && k != 0 { z * z } else { z };
            factor * fra(t, x, l, k)
        }),
        Arc::new(move |t, x, l, k| {
            let z = zb.eval(x);
            if z == 0.0 {
                0.0
            } else {
                z * frb(t, x, l, k)
            }
        }),
    )
}

/// The continuous comparison data: `zeta^2` on `a`, a single `zeta` on
/// `psi, b, c, sigma, mu, f, g`. Its coefficients agree with the
/// original ones on the plateau ball, which is the comparison pair the
/// localization estimate speaks about. An analytic `rho` override is
/// carried along as `zeta rho` (valid since `zeta >= 0` and
/// `alpha_truncated = zeta^2 alpha`).
pub fn truncated_reference_data(zeta: &CutoffFn, cd: &ContinuousData) -> ContinuousData {
    let zmul = |z: &CutoffFn, v: f64, x: &[f64]| {
        let w = z.eval(x);
        if w == 0.0 {
            0.0
        } else {
            w * v
        }
    };

    let (z, inner) = (zeta.clone(), cd.clone());
    let psi: ScalarFn = Arc::new(move |t, x| zmul(&z, (inner.psi)(t, x), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let a: EntryFn = Arc::new(move |t, x, i, j| {
        let w = z.eval(x);
        if w == 0.0 {
            0.0
        } else {
            w * w * inner.a_entry(t, x, i, j)
        }
    });
    let (z, inner) = (zeta.clone(), cd.clone());
    let b: ChannelFn = Arc::new(move |t, x, i| zmul(&z, (inner.b)(t, x, i), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let c: ScalarFn = Arc::new(move |t, x| zmul(&z, (inner.c)(t, x), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let sigma: EntryFn = Arc::new(move |t, x, i, k| zmul(&z, inner.sigma_entry(t, x, i, k), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let mu: ChannelFn = Arc::new(move |t, x, k| zmul(&z, (inner.mu)(t, x, k), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let f: ScalarFn = Arc::new(move |t, x| zmul(&z, (inner.f)(t, x), x));
    let (z, inner) = (zeta.clone(), cd.clone());
    let g: ChannelFn = Arc::new(move |t, x, k| zmul(&z, (inner.g)(t, x, k), x));

    let mut out = ContinuousData::new(
        cd.dim,
        cd.channels,
        cd.horizon,
        psi,
        a,
        b,
        c,
        sigma,
        mu,
        f,
        g,
    );
    if let Some(rho) = cd.rho_override.clone() {
        let z = zeta.clone();
        out = out.with_rho_override(Arc::new(move |t, x, i, j| zmul(&z, rho(t, x, i, j), x)));
    }
    out
}
