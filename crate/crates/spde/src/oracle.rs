//! Monte Carlo evaluation of the solution through its stochastic
//! characteristics, independent of the grid solver.
//!
//! Adding an auxiliary noise term `rho^r D_r v dw_hat^r` makes the
//! equation fully degenerate; conditioning on the original channels
//! recovers `u`. Along the flow `dY = beta(Y) dt - sigma^k(Y) dw^k -
//! rho^r(Y) dw_hat^r` the field reduces to the scalar recursion
//! `dU = (gamma(Y) U + phi(Y)) dt + (mu^k(Y) U + g^k(Y)) dw^k` with
//! `U_0 = psi(y)`, and `u_t(x)` is the average over auxiliary paths of
//! `U_t(Y_t^{-1}(x))`. Inversion of the realized flow is by bisection,
//! which restricts this module to one dimension; the worked problems
//! are all one-dimensional.

use crate::error::{Error, Result};
use crate::noise::{aux_stream, NoisePath};
use crate::par;
use crate::problem::{default_probes, degenerate_structure, ContinuousData, DegenerateStructure};
use crate::problems::AnalyticDerivatives;
use std::sync::Arc;

type Scalar1 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Channel1 = Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;

/// How spatial derivatives of `sigma`, `mu`, `g`, `rho` are obtained.
#[derive(Debug, Clone)]
pub enum DerivativeMode {
    /// Closed-form closures registered with the problem.
    Analytic,
    /// Central differences with step `eps_scale * (1 + |x|)`.
    FiniteDifference { eps_scale: f64 },
}

/// Controls for the characteristics estimator.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Euler-Maruyama substeps per driving-noise step.
    pub substeps: usize,
    pub derivative_mode: DerivativeMode,
    /// Auxiliary-path samples; forced to 1 when `rho == 0`.
    pub inner_samples: usize,
    /// Target on `|Y_T(y) - x|` for the flow inversion.
    pub inv_tol: f64,
    /// Bracket-expansion budget before inversion gives up.
    pub max_bracket_doublings: usize,
    pub max_bisections: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            substeps: 4,
            derivative_mode: DerivativeMode::FiniteDifference { eps_scale: 1e-5 },
            inner_samples: 1000,
            inv_tol: 1e-7,
            max_bracket_doublings: 60,
            max_bisections: 200,
        }
    }
}

/// Coefficients of the reduced zero-order system along the flow, in one
/// dimension:
/// `beta  = -b + sigma_k D sigma_k + rho D rho + sigma_k mu_k`,
/// `gamma = c - sigma_k D mu_k`, `phi = f - sigma_k D g_k`.
#[derive(Clone)]
pub struct ReducedCoeffs {
    channels: usize,
    pub beta: Scalar1,
    pub gamma: Scalar1,
    pub phi: Scalar1,
    sigma: Channel1,
    rho: Scalar1,
    mu: Channel1,
    g: Channel1,
    rho_is_zero: bool,
}

impl ReducedCoeffs {
    pub fn rho_is_zero(&self) -> bool {
        self.rho_is_zero
    }
}

fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, eps_scale: f64) -> f64 {
    let eps = eps_scale * (1.0 + x.abs());
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Builds the reduced coefficients. In analytic mode the problem must
/// carry closed-form derivatives; in finite-difference mode they are
/// taken by central differences of the data closures (the square root
/// `rho` included, kinks and all).
pub fn reduced_coeffs(
    cd: &ContinuousData,
    ds: &DegenerateStructure,
    mode: &DerivativeMode,
    derivs: Option<&AnalyticDerivatives>,
) -> Result<ReducedCoeffs> {
    if cd.dim != 1 {
        return Err(Error::Domain(
            "the characteristics oracle runs in one dimension".into(),
        ));
    }
    let channels = cd.channels;
    let sigma: Channel1 = {
        let cd = cd.clone();
        Arc::new(move |t, x, k| cd.sigma_entry(t, &[x], 0, k))
    };
    let mu: Channel1 = {
        let cd = cd.clone();
        Arc::new(move |t, x, k| (cd.mu)(t, &[x], k))
    };
    let g: Channel1 = {
        let cd = cd.clone();
        Arc::new(move |t, x, k| (cd.g)(t, &[x], k))
    };

    let (rho, dsigma, dmu, dg, drho): (Scalar1, Channel1, Channel1, Channel1, Scalar1) = match mode
    {
        DerivativeMode::Analytic => {
            let d = derivs.ok_or_else(|| {
                Error::Domain("analytic derivative mode needs registered derivatives".into())
            })?;
            (
                {
                    let r = d.rho.clone();
                    Arc::new(move |t, x| r(t, x))
                },
                d.dsigma.clone(),
                d.dmu.clone(),
                d.dg.clone(),
                d.drho.clone(),
            )
        }
        DerivativeMode::FiniteDifference { eps_scale } => {
            let eps = *eps_scale;
            let rho: Scalar1 = {
                let ds = ds.clone();
                Arc::new(move |t, x| ds.rho1(t, x))
            };
            let dsigma: Channel1 = {
                let s = sigma.clone();
                Arc::new(move |t, x, k| central_diff(&|y| s(t, y, k), x, eps))
            };
            let dmu: Channel1 = {
                let m = mu.clone();
                Arc::new(move |t, x, k| central_diff(&|y| m(t, y, k), x, eps))
            };
            let dg: Channel1 = {
                let gg = g.clone();
                Arc::new(move |t, x, k| central_diff(&|y| gg(t, y, k), x, eps))
            };
            let drho: Scalar1 = {
                let r = rho.clone();
                Arc::new(move |t, x| central_diff(&|y| r(t, y), x, eps))
            };
            (rho, dsigma, dmu, dg, drho)
        }
    };

    let beta: Scalar1 = {
        let cd = cd.clone();
        let (s, dsg, r, dr, m) = (sigma.clone(), dsigma.clone(), rho.clone(), drho, mu.clone());
        Arc::new(move |t, x| {
            let mut acc = -(cd.b)(t, &[x], 0);
            for k in 0..cd.channels {
                let sk = s(t, x, k);
                acc += sk * dsg(t, x, k) + sk * m(t, x, k);
            }
            acc + r(t, x) * dr(t, x)
        })
    };
    let gamma: Scalar1 = {
        let cd = cd.clone();
        let (s, dm) = (sigma.clone(), dmu);
        Arc::new(move |t, x| {
            let mut acc = (cd.c)(t, &[x]);
            for k in 0..cd.channels {
                acc -= s(t, x, k) * dm(t, x, k);
            }
            acc
        })
    };
    let phi: Scalar1 = {
        let cd = cd.clone();
        let (s, dgk) = (sigma.clone(), dg);
        Arc::new(move |t, x| {
            let mut acc = (cd.f)(t, &[x]);
            for k in 0..cd.channels {
                acc -= s(t, x, k) * dgk(t, x, k);
            }
            acc
        })
    };

    Ok(ReducedCoeffs {
        channels,
        beta,
        gamma,
        phi,
        sigma,
        rho,
        mu,
        g,
        rho_is_zero: ds.alpha_identically_zero,
    })
}

fn check_paths(rc: &ReducedCoeffs, w: &NoisePath, wa: &NoisePath, steps: usize) -> Result<()> {
    if steps > w.n() || steps > wa.n() {
        return Err(Error::ShapeMismatch(format!(
            "need {steps} steps but paths carry {} / {}",
            w.n(),
            wa.n()
        )));
    }
    if (w.tau() - wa.tau()).abs() > 1e-12 * w.tau() {
        return Err(Error::ShapeMismatch(
            "driving and auxiliary paths have different step sizes".into(),
        ));
    }
    if w.channels() < rc.channels {
        return Err(Error::ShapeMismatch(format!(
            "driving path carries {} channels, need {}",
            w.channels(),
            rc.channels
        )));
    }
    Ok(())
}

/// Forward Euler-Maruyama for the flow alone.
pub fn simulate_flow(
    rc: &ReducedCoeffs,
    y0: f64,
    w: &NoisePath,
    wa: &NoisePath,
    steps: usize,
) -> Result<f64> {
    check_paths(rc, w, wa, steps)?;
    let dt = w.tau();
    let mut y = y0;
    for j in 0..steps {
        let t = dt * j as f64;
        let mut dy = (rc.beta)(t, y) * dt - (rc.rho)(t, y) * wa.increment(j, 0);
        for k in 0..rc.channels {
            dy -= (rc.sigma)(t, y, k) * w.increment(j, k);
        }
        y += dy;
        if !y.is_finite() {
            return Err(Error::BlowUp { step: j + 1 });
        }
    }
    Ok(y)
}

/// Joint Euler-Maruyama for `(Y, U)` from `Y_0 = y`, `U_0 = psi(y)`;
/// returns the terminal pair.
pub fn simulate_characteristic(
    rc: &ReducedCoeffs,
    psi: &dyn Fn(f64) -> f64,
    y0: f64,
    w: &NoisePath,
    wa: &NoisePath,
    steps: usize,
) -> Result<(f64, f64)> {
    check_paths(rc, w, wa, steps)?;
    let dt = w.tau();
    let mut y = y0;
    let mut u = psi(y0);
    for j in 0..steps {
        let t = dt * j as f64;
        let mut dy = (rc.beta)(t, y) * dt - (rc.rho)(t, y) * wa.increment(j, 0);
        let mut du = ((rc.gamma)(t, y) * u + (rc.phi)(t, y)) * dt;
        for k in 0..rc.channels {
            let xi = w.increment(j, k);
            dy -= (rc.sigma)(t, y, k) * xi;
            du += ((rc.mu)(t, y, k) * u + (rc.g)(t, y, k)) * xi;
        }
        y += dy;
        u += du;
        if !y.is_finite() || !u.is_finite() {
            return Err(Error::BlowUp { step: j + 1 });
        }
    }
    Ok((y, u))
}

/// Solves `Y_T(y) = x` for `y` by bisection on the realized flow,
/// reusing the same driving paths for every candidate. The flow must be
/// increasing on the bracket (checked by sampling).
pub fn invert_flow(
    rc: &ReducedCoeffs,
    x: f64,
    w: &NoisePath,
    wa: &NoisePath,
    steps: usize,
    cfg: &FlowConfig,
) -> Result<f64> {
    let flow = |y: f64| simulate_flow(rc, y, w, wa, steps);
    let mut width = 1.0 + 0.25 * x.abs();
    let mut lo = x - width;
    let mut hi = x + width;
    let mut doublings = 0;
    while flow(lo)? > x {
        width *= 2.0;
        lo = x - width;
        doublings += 1;
        if doublings > cfg.max_bracket_doublings {
            return Err(Error::Inversion(format!(
                "no lower bracket for x = {x} within {} doublings",
                cfg.max_bracket_doublings
            )));
        }
    }
    let mut width = 1.0 + 0.25 * x.abs();
    while flow(hi)? < x {
        width *= 2.0;
        hi = x + width;
        doublings += 1;
        if doublings > cfg.max_bracket_doublings {
            return Err(Error::Inversion(format!(
                "no upper bracket for x = {x} within {} doublings",
                cfg.max_bracket_doublings
            )));
        }
    }
    // Monotonicity spot check across the bracket.
    let mut prev = f64::NEG_INFINITY;
    for i in 0..5 {
        let y = lo + (hi - lo) * i as f64 / 4.0;
        let v = flow(y)?;
        if v < prev {
            return Err(Error::Inversion(format!(
                "realized flow is not increasing near y = {y}"
            )));
        }
        prev = v;
    }
    let mut best = (f64::INFINITY, lo);
    for _ in 0..cfg.max_bisections {
        let mid = 0.5 * (lo + hi);
        let v = flow(mid)?;
        let r = v - x;
        if r.abs() < best.0 {
            best = (r.abs(), mid);
        }
        if r.abs() <= cfg.inv_tol {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * (1.0 + x.abs()) {
            break;
        }
    }
    if best.0 <= cfg.inv_tol {
        Ok(best.1)
    } else {
        Err(Error::Inversion(format!(
            "bisection stalled at residual {:.3e} (tolerance {:.3e})",
            best.0, cfg.inv_tol
        )))
    }
}

/// Monte Carlo estimate of `u_t(x)`.
#[derive(Debug, Clone)]
pub struct UEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Inner samples that contributed.
    pub used: usize,
    /// Inner samples lost to inversion or blow-up errors.
    pub failures: usize,
}

/// Estimates `u_t(x)` for the (possibly truncated) problem `cd` from
/// the shared driving path `w_fine`, averaging over independent
/// auxiliary paths. When `rho == 0` a single inner sample is exact in
/// the auxiliary noise. Inner samples run in parallel; failures are
/// counted and tolerated up to 5 percent.
pub fn estimate_u(
    cd: &ContinuousData,
    derivs: Option<&AnalyticDerivatives>,
    t: f64,
    x: f64,
    w_fine: &NoisePath,
    cfg: &FlowConfig,
) -> Result<UEstimate> {
    if cd.dim != 1 {
        return Err(Error::Domain(
            "the characteristics oracle runs in one dimension".into(),
        ));
    }
    let steps_f = t / w_fine.tau();
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * (1.0 + steps_f.abs()) || steps == 0 {
        return Err(Error::Domain(format!(
            "time {t} is not a positive multiple of the fine step {}",
            w_fine.tau()
        )));
    }
    let probes = default_probes(1, cd.horizon, 1.0 + 2.0 * x.abs() + 4.0 * cd.horizon.sqrt());
    let ds = degenerate_structure(cd, &probes)?;
    let rc = reduced_coeffs(cd, &ds, &cfg.derivative_mode, derivs)?;
    let inner = if rc.rho_is_zero() {
        1
    } else {
        cfg.inner_samples.max(1)
    };
    let psi = |y: f64| (cd.psi)(0.0, &[y]);

    let results: Vec<Result<f64>> = par::map_indexed(inner, |j| {
        let wa = NoisePath::generate(
            w_fine.seed(),
            aux_stream(w_fine.sample_id(), j as u64),
            w_fine.n(),
            w_fine.tau(),
            1,
        )?;
        let y = invert_flow(&rc, x, w_fine, &wa, steps, cfg)?;
        let (_, u) = simulate_characteristic(&rc, &psi, y, w_fine, &wa, steps)?;
        Ok(u)
    });
    let mut values = Vec::with_capacity(inner);
    let mut failures = 0usize;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                failures += 1;
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    if failures * 20 > inner || values.is_empty() {
        return Err(Error::Inversion(format!(
            "{failures} of {inner} inner samples failed; first: {}",
            first_error.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    let used = values.len();
    let mean = values.iter().sum::<f64>() / used as f64;
    let stderr = if used > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (used - 1) as f64;
        (var / used as f64).sqrt()
    } else {
        0.0
    };
    Ok(UEstimate {
        mean,
        stderr,
        used,
        failures,
    })
}
