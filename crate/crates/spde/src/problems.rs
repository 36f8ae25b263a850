//! Built-in problems and the bundle tying discrete coefficients to the
//! continuous data they are compatible with.
//!
//! Registry:
//! - `paper-example`: `du = sin^2(x) D^2 u dt + sin(x) Du dw`,
//!   `u_0 = (1 + x^2)^{-1}` on `[0, 1]`; degenerate where `sin` vanishes,
//!   no closed-form solution.
//! - `stochastic-transport`: `a = 1/2`, `sigma = 1` (fully degenerate);
//!   solution `u_t(x) = psi(x + w_t)` pathwise.
//! - `heat`: `a = 1/2`, no noise; Gaussian initial value with the exact
//!   kernel-convolution solution.

use crate::error::{Error, Result};
use crate::problem::{
    derive_continuous, zero_channel, zero_entry, zero_scalar, ContinuousData, DiscreteCoeffs,
    ScalarFn,
};
use crate::stencil::StencilSet;
use std::sync::Arc;

/// Exact solution evaluated pathwise: `(t, x, w_t row) -> u_t(x)`.
pub type PathSolution = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Analytic x-derivatives needed by the characteristics oracle in one
/// dimension; the finite-difference mode is used when absent.
#[derive(Clone)]
pub struct AnalyticDerivatives {
    /// `d/dx sigma^{1k}(t, x)`.
    pub dsigma: Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>,
    /// `d/dx mu^k(t, x)`.
    pub dmu: Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>,
    /// `d/dx g^k(t, x)`.
    pub dg: Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>,
    /// `rho(t, x)` in closed form.
    pub rho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// `d/dx rho(t, x)` (defined as 0 at kinks).
    pub drho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

/// A named problem: compatible discrete/continuous pair plus optional
/// analytic reference material.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub continuous: ContinuousData,
    pub discrete: DiscreteCoeffs,
    pub analytic: Option<PathSolution>,
    pub derivatives: Option<AnalyticDerivatives>,
}

impl Problem {
    /// Same problem on a different horizon.
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        assert!(horizon > 0.0);
        self.continuous.horizon = horizon;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.continuous.horizon
    }

    pub fn channels(&self) -> usize {
        self.continuous.channels
    }
}

/// Builds a 1D problem from discrete coefficients plus data, deriving
/// the continuous coefficients through the compatibility identities.
pub fn from_discrete_1d(
    name: &str,
    dc: DiscreteCoeffs,
    psi: ScalarFn,
    f: ScalarFn,
    g: crate::problem::ChannelFn,
    horizon: f64,
) -> Problem {
    let derived = derive_continuous(&dc);
    let channels = dc.channels();
    let continuous = ContinuousData::new(
        1,
        channels,
        horizon,
        psi,
        derived.a,
        derived.b,
        derived.c,
        derived.sigma,
        derived.mu,
        f,
        g,
    );
    Problem {
        name: name.to_string(),
        continuous,
        discrete: dc,
        analytic: None,
        derivatives: None,
    }
}

fn inv_quadratic() -> ScalarFn {
    Arc::new(|_, x: &[f64]| 1.0 / (1.0 + x[0] * x[0]))
}

fn paper_example() -> Problem {
    let st = StencilSet::line(&[1]).expect("static stencil");
    let dc = DiscreteCoeffs::new(
        st,
        1,
        Arc::new(|_, x: &[f64], l, k| {
            if l == 1 && k == 1 {
                x[0].sin().powi(2)
            } else {
                0.0
            }
        }),
        Arc::new(|_, x: &[f64], l, _| if l == 1 { x[0].sin() } else { 0.0 }),
        1.0,
    )
    .autonomous();
    let mut p = from_discrete_1d(
        "paper-example",
        dc,
        inv_quadratic(),
        zero_scalar(),
        zero_channel(),
        1.0,
    );
    // alpha = 2 sin^2 - sin^2 = sin^2, so rho = |sin| in closed form.
    p.continuous = p
        .continuous
        .with_rho_override(Arc::new(|_, x: &[f64], _, _| x[0].sin().abs()));
    p.derivatives = Some(AnalyticDerivatives {
        dsigma: Arc::new(|_, x, _| x.cos()),
        dmu: Arc::new(|_, _, _| 0.0),
        dg: Arc::new(|_, _, _| 0.0),
        rho: Arc::new(|_, x| x.sin().abs()),
        drho: Arc::new(|_, x| {
            let s = x.sin();
            if s == 0.0 {
                0.0
            } else {
                s.signum() * x.cos()
            }
        }),
    });
    p
}

fn stochastic_transport() -> Problem {
    let st = StencilSet::line(&[1]).expect("static stencil");
    let dc = DiscreteCoeffs::new(
        st,
        1,
        Arc::new(|_, _, l, k| if l == 1 && k == 1 { 0.5 } else { 0.0 }),
        Arc::new(|_, _, l, _| if l == 1 { 1.0 } else { 0.0 }),
        1.0,
    )
    .autonomous();
    let mut p = from_discrete_1d(
        "stochastic-transport",
        dc,
        inv_quadratic(),
        zero_scalar(),
        zero_channel(),
        1.0,
    );
    // alpha = 2 * 1/2 - 1 = 0 exactly.
    p.continuous = p.continuous.with_rho_override(zero_entry());
    p.analytic = Some(Arc::new(|_t, x: &[f64], w: &[f64]| {
        let y = x[0] + w[0];
        1.0 / (1.0 + y * y)
    }));
    p.derivatives = Some(AnalyticDerivatives {
        dsigma: Arc::new(|_, _, _| 0.0),
        dmu: Arc::new(|_, _, _| 0.0),
        dg: Arc::new(|_, _, _| 0.0),
        rho: Arc::new(|_, _| 0.0),
        drho: Arc::new(|_, _| 0.0),
    });
    p
}

fn heat() -> Problem {
    let st = StencilSet::line(&[1]).expect("static stencil");
    let dc = DiscreteCoeffs::new(
        st,
        1,
        Arc::new(|_, _, l, k| if l == 1 && k == 1 { 0.5 } else { 0.0 }),
        zero_entry(),
        1.0,
    )
    .autonomous();
    let psi: ScalarFn = Arc::new(|_, x: &[f64]| (-x[0] * x[0] / 2.0).exp());
    let mut p = from_discrete_1d("heat", dc, psi, zero_scalar(), zero_channel(), 1.0);
    // alpha = 1, rho = 1.
    p.continuous = p.continuous.with_rho_override(Arc::new(|_, _, _, _| 1.0));
    // Convolving exp(-x^2/2) with the kernel of (1/2) D^2 over time t
    // gives (1 + t)^{-1/2} exp(-x^2 / (2 (1 + t))).
    p.analytic = Some(Arc::new(|t, x: &[f64], _w: &[f64]| {
        (1.0 + t).powf(-0.5) * (-x[0] * x[0] / (2.0 * (1.0 + t))).exp()
    }));
    p.derivatives = Some(AnalyticDerivatives {
        dsigma: Arc::new(|_, _, _| 0.0),
        dmu: Arc::new(|_, _, _| 0.0),
        dg: Arc::new(|_, _, _| 0.0),
        rho: Arc::new(|_, _| 1.0),
        drho: Arc::new(|_, _| 0.0),
    });
    p
}

/// Derivatives of the truncated data `zeta sigma, zeta mu, zeta g` (and
/// `zeta rho`) by the product rule, for the oracle run against
/// [`crate::cutoff::truncated_reference_data`]. One-dimensional.
pub fn truncate_derivatives_1d(
    p: &Problem,
    zeta: &crate::cutoff::CutoffFn,
) -> Option<AnalyticDerivatives> {
    let base = p.derivatives.clone()?;
    let cd = p.continuous.clone();
    let make = |want_base: fn(
        &AnalyticDerivatives,
    ) -> Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>,
                value: Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>,
                zeta: crate::cutoff::CutoffFn,
                base: AnalyticDerivatives| {
        let d = want_base(&base);
        Arc::new(move |t: f64, x: f64, k: usize| {
            zeta.derivative1(x) * value(t, x, k) + zeta.eval1(x) * d(t, x, k)
        }) as Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>
    };
    let sigma_val = {
        let cd = cd.clone();
        Arc::new(move |t: f64, x: f64, k: usize| cd.sigma_entry(t, &[x], 0, k))
            as Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>
    };
    let mu_val = {
        let cd = cd.clone();
        Arc::new(move |t: f64, x: f64, k: usize| (cd.mu)(t, &[x], k))
            as Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>
    };
    let g_val = {
        let cd = cd.clone();
        Arc::new(move |t: f64, x: f64, k: usize| (cd.g)(t, &[x], k))
            as Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>
    };
    let rho_base = base.rho.clone();
    let drho_base = base.drho.clone();
    let (z1, z2) = (zeta.clone(), zeta.clone());
    Some(AnalyticDerivatives {
        dsigma: make(|b| b.dsigma.clone(), sigma_val, zeta.clone(), base.clone()),
        dmu: make(|b| b.dmu.clone(), mu_val, zeta.clone(), base.clone()),
        dg: make(|b| b.dg.clone(), g_val, zeta.clone(), base.clone()),
        rho: {
            let rho = rho_base.clone();
            Arc::new(move |t, x| z1.eval1(x) * rho(t, x))
        },
        drho: Arc::new(move |t, x| {
            z2.derivative1(x) * rho_base(t, x) + z2.eval1(x) * drho_base(t, x)
        }),
    })
}

pub const BUILTIN_NAMES: [&str; 3] = ["paper-example", "stochastic-transport", "heat"];

/// Looks up a problem by registry name.
pub fn builtin(name: &str) -> Result<Problem> {
    match name {
        "paper-example" => Ok(paper_example()),
        "stochastic-transport" => Ok(stochastic_transport()),
        "heat" => Ok(heat()),
        other => Err(Error::Config(format!(
            "unknown problem `{other}`; built-ins: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}
