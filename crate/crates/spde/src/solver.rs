//! Difference operators on a grid and the semi-implicit Euler stepper.
//!
//! Each step solves `(I - tau L^{h,R}_{tau i}) v_i = v_{i-1} +
//! tau f^R_{tau(i-1)} + sum_k (M^{h,R,k}_{tau(i-1)} v_{i-1} +
//! g^{R,k}_{tau(i-1)}) xi_i^k`: the drift operator is taken at the new
//! time level, the noise operator and free data at the old one. Values
//! at lattice points outside the stored box are read as exact zeros,
//! which is no approximation as long as the box contains the cutoff
//! support (cutoff coefficients and data vanish there and zero is a
//! fixed point of the recursion).

use crate::cutoff::{apply_to_coeffs, apply_to_data, CutoffFn};
use crate::error::{Error, Result};
use crate::linalg::{gmres, norm2, BandedLu, BandedMatrix, CsrMatrix};
use crate::noise::NoisePath;
use crate::problem::{ChannelFn, DiscreteCoeffs, ScalarFn};
use crate::stencil::Grid;

/// Which first-difference formula `delta^h_lambda` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaForm {
    /// `(phi(x + h lambda) - phi(x - h lambda)) / (2h)`: the central
    /// first difference, consistent with `delta -> d/d lambda`,
    /// second-order compositions, and extrapolation in powers of 4.
    CentralFirst,
    /// `(phi(x + h lambda) - 2 phi(x) + phi(x - h lambda)) / (2h)`:
    /// diagnostic only; kept for side-by-side comparison.
    Displayed,
}

/// Applies `delta^h_lambda` to a field; the zero vector is the identity
/// and out-of-grid neighbors read as zero.
pub fn apply_delta(field: &[f64], grid: &Grid, lambda: &[i64], form: DeltaForm) -> Vec<f64> {
    if lambda.iter().all(|&c| c == 0) {
        return field.to_vec();
    }
    let inv = 1.0 / (2.0 * grid.h());
    (0..grid.len())
        .map(|i| {
            let plus = grid.neighbor(i, lambda, 1).map_or(0.0, |j| field[j]);
            let minus = grid.neighbor(i, lambda, -1).map_or(0.0, |j| field[j]);
            match form {
                DeltaForm::CentralFirst => (plus - minus) * inv,
                DeltaForm::Displayed => (plus - 2.0 * field[i] + minus) * inv,
            }
        })
        .collect()
}

/// Stencil footprint of `delta_lambda delta_kappa` (central first
/// differences composed exactly): integer offsets with their weights.
fn pair_footprint(lambda: &[i64], kappa: &[i64], h: f64) -> Vec<(Vec<i64>, f64)> {
    let dim = lambda.len();
    let l0 = lambda.iter().all(|&c| c == 0);
    let k0 = kappa.iter().all(|&c| c == 0);
    let mut out: Vec<(Vec<i64>, f64)> = Vec::with_capacity(4);
    let mut push = |off: Vec<i64>, w: f64| {
        if let Some(e) = out.iter_mut().find(|e| e.0 == off) {
            e.1 += w;
        } else {
            out.push((off, w));
        }
    };
    match (l0, k0) {
        (true, true) => push(vec![0; dim], 1.0),
        (true, false) => {
            let w = 1.0 / (2.0 * h);
            push(kappa.to_vec(), w);
            push(kappa.iter().map(|&c| -c).collect(), -w);
        }
        (false, true) => {
            let w = 1.0 / (2.0 * h);
            push(lambda.to_vec(), w);
            push(lambda.iter().map(|&c| -c).collect(), -w);
        }
        (false, false) => {
            let w = 1.0 / (4.0 * h * h);
            for (sl, sk, sign) in [(1, 1, w), (1, -1, -w), (-1, 1, -w), (-1, -1, w)] {
                let off: Vec<i64> = lambda
                    .iter()
                    .zip(kappa.iter())
                    .map(|(&l, &k)| sl * l + sk * k)
                    .collect();
                push(off, sign);
            }
        }
    }
    out
}

/// Footprint of a single `delta_lambda`.
fn single_footprint(lambda: &[i64], h: f64) -> Vec<(Vec<i64>, f64)> {
    if lambda.iter().all(|&c| c == 0) {
        return vec![(lambda.to_vec(), 1.0)];
    }
    let w = 1.0 / (2.0 * h);
    vec![
        (lambda.to_vec(), w),
        (lambda.iter().map(|&c| -c).collect(), -w),
    ]
}

/// Assembled drift and noise operators at one time level.
pub struct OperatorMatrices {
    pub l: CsrMatrix,
    pub m: Vec<CsrMatrix>,
}

fn accumulate_row(
    row: &mut Vec<(usize, f64)>,
    grid: &Grid,
    point: usize,
    footprint: &[(Vec<i64>, f64)],
    coef: f64,
) {
    for (off, w) in footprint {
        if let Some(col) = grid.neighbor(point, off, 1) {
            let v = coef * w;
            if let Some(e) = row.iter_mut().find(|e| e.0 == col) {
                e.1 += v;
            } else {
                row.push((col, v));
            }
        }
    }
}

/// Rows of `L^h_t = sum fra(lambda, kappa) delta_lambda delta_kappa`.
pub fn assemble_l_rows(dc: &DiscreteCoeffs, grid: &Grid, t: f64) -> Vec<Vec<(usize, f64)>> {
    let stencil = dc.stencil();
    let vs = stencil.vectors();
    let footprints: Vec<Vec<Vec<(Vec<i64>, f64)>>> = vs
        .iter()
        .map(|l| vs.iter().map(|k| pair_footprint(l, k, grid.h())).collect())
        .collect();
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.position_into(i, &mut x);
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (li, row_fp) in footprints.iter().enumerate() {
                for (ki, fp) in row_fp.iter().enumerate() {
                    let coef = dc.fra(t, &x, li, ki);
                    if coef != 0.0 {
                        accumulate_row(&mut row, grid, i, fp, coef);
                    }
                }
            }
            row
        })
        .collect()
}

/// Rows of `M^{h,k}_t = sum frb(lambda, k) delta_lambda` for channel `k`.
pub fn assemble_m_rows(
    dc: &DiscreteCoeffs,
    grid: &Grid,
    t: f64,
    channel: usize,
) -> Vec<Vec<(usize, f64)>> {
    let vs = dc.stencil().vectors();
    let footprints: Vec<Vec<(Vec<i64>, f64)>> =
        vs.iter().map(|l| single_footprint(l, grid.h())).collect();
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.position_into(i, &mut x);
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (li, fp) in footprints.iter().enumerate() {
                let coef = dc.frb(t, &x, li, channel);
                if coef != 0.0 {
                    accumulate_row(&mut row, grid, i, fp, coef);
                }
            }
            row
        })
        .collect()
}

/// Assembles `L` and all `M^k` at time `t`.
pub fn assemble(dc: &DiscreteCoeffs, grid: &Grid, t: f64) -> OperatorMatrices {
    let l = CsrMatrix::from_rows(assemble_l_rows(dc, grid, t));
    let m = (0..dc.channels())
        .map(|k| CsrMatrix::from_rows(assemble_m_rows(dc, grid, t, k)))
        .collect();
    OperatorMatrices { l, m }
}

/// Linear-solve controls for the implicit step.
#[derive(Debug, Clone)]
pub struct StepperOptions {
    /// Residual tolerance relative to `1 + |rhs|`.
    pub lin_tol: f64,
    /// Krylov iteration budget as a multiple of the grid size.
    pub max_iter_factor: usize,
    /// GMRES restart length.
    pub restart: usize,
    /// Bandwidth at or below which the direct banded path is taken.
    pub direct_bandwidth: usize,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            lin_tol: 1e-11,
            max_iter_factor: 10,
            restart: 50,
            direct_bandwidth: 32,
        }
    }
}

/// Solves `A x = rhs` by direct banded elimination when the bandwidth
/// is small, otherwise by restarted GMRES; either way the residual is
/// verified against `tol (1 + |rhs|)`.
pub fn solve_linear(
    a: &CsrMatrix,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
    opts: &StepperOptions,
) -> Result<Vec<f64>> {
    let x = if a.bandwidth() <= opts.direct_bandwidth {
        let lu = BandedMatrix::from_csr(a).factor()?;
        lu.solve(rhs)
    } else {
        gmres(a, rhs, tol, max_iter, opts.restart)?
    };
    let mut r = a.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri -= bi;
    }
    let res = norm2(&r);
    if !(res <= tol * (1.0 + norm2(rhs))) {
        return Err(Error::LinearSolve {
            iterations: max_iter,
            residual: res,
        });
    }
    Ok(x)
}

/// A localized problem ready for the stepper: cutoff applied to both
/// the discrete coefficients and the free data.
#[derive(Clone)]
pub struct LocalizedProblem {
    pub coeffs: DiscreteCoeffs,
    pub psi: ScalarFn,
    pub f: ScalarFn,
    pub g: ChannelFn,
    pub support_radius: f64,
}

/// Applies the cutoff to coefficients and data.
pub fn localize(
    dc: &DiscreteCoeffs,
    psi: &ScalarFn,
    f: &ScalarFn,
    g: &ChannelFn,
    zeta: &CutoffFn,
) -> LocalizedProblem {
    let (psi_r, f_r, g_r) = apply_to_data(zeta, psi, f, g);
    LocalizedProblem {
        coeffs: apply_to_coeffs(zeta, dc),
        psi: psi_r,
        f: f_r,
        g: g_r,
        support_radius: zeta.support_radius(),
    }
}

/// Builds the solver grid for a localized problem: the box inflates the
/// cutoff support by one composed-stencil halo so every stencil read
/// from a supported point stays inside the stored box.
pub fn solver_grid(lp: &LocalizedProblem, h: f64, fallback_radius: f64) -> Result<Grid> {
    let stencil = lp.coeffs.stencil();
    let radius = if lp.support_radius.is_finite() {
        lp.support_radius + 2.0 * h * stencil.max_norm()
    } else {
        fallback_radius
    };
    crate::stencil::build_grid(stencil, h, radius)
}

enum DriftSolver {
    /// Factorized once; coefficients independent of time.
    CachedBanded { a: BandedMatrix, lu: BandedLu },
    /// Rebuilt and factorized each step.
    Banded,
    /// General sparse path.
    Krylov { cached: Option<CsrMatrix> },
}

/// Stateful semi-implicit Euler stepper over one noise path.
pub struct Stepper<'a> {
    lp: &'a LocalizedProblem,
    grid: &'a Grid,
    noise: &'a NoisePath,
    tau: f64,
    n: usize,
    opts: StepperOptions,
    positions: Vec<f64>,
    v: Vec<f64>,
    index: usize,
    drift: DriftSolver,
    noise_ops: Option<Vec<CsrMatrix>>,
    buf_mv: Vec<f64>,
    buf_rhs: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        lp: &'a LocalizedProblem,
        grid: &'a Grid,
        noise: &'a NoisePath,
        tau: f64,
        n: usize,
        opts: StepperOptions,
    ) -> Result<Self> {
        if n == 0 || !(tau > 0.0) {
            return Err(Error::Domain("need n >= 1 and tau > 0".into()));
        }
        if noise.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "noise path has {} steps, stepper needs {n}",
                noise.n()
            )));
        }
        if (noise.tau() - tau).abs() > 1e-12 * tau {
            return Err(Error::ShapeMismatch(format!(
                "noise step {} does not match tau {tau}",
                noise.tau()
            )));
        }
        if noise.channels() < lp.coeffs.channels() {
            return Err(Error::ShapeMismatch(format!(
                "noise path carries {} channels, coefficients need {}",
                noise.channels(),
                lp.coeffs.channels()
            )));
        }
        if lp.support_radius.is_finite() && grid.box_radius() < lp.support_radius * (1.0 - 1e-12) {
            return Err(Error::Domain(format!(
                "grid box {} does not contain the cutoff support {}",
                grid.box_radius(),
                lp.support_radius
            )));
        }
        let dim = grid.dim();
        let mut positions = vec![0.0; grid.len() * dim];
        for i in 0..grid.len() {
            grid.position_into(i, &mut positions[i * dim..(i + 1) * dim]);
        }
        let v: Vec<f64> = (0..grid.len())
            .map(|i| (lp.psi)(0.0, &positions[i * dim..(i + 1) * dim]))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::StepFailure {
                step: 0,
                residual: f64::NAN,
            });
        }
        let use_banded = {
            // Probe the drift sparsity once to pick the solve path.
            let probe = CsrMatrix::from_rows(assemble_l_rows(&lp.coeffs, grid, tau));
            probe.bandwidth() <= opts.direct_bandwidth
        };
        let drift = if use_banded {
            DriftSolver::Banded
        } else {
            DriftSolver::Krylov { cached: None }
        };
        Ok(Self {
            lp,
            grid,
            noise,
            tau,
            n,
            opts,
            positions,
            v,
            index: 0,
            drift,
            noise_ops: None,
            buf_mv: vec![0.0; grid.len()],
            buf_rhs: vec![0.0; grid.len()],
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn time(&self) -> f64 {
        self.index as f64 * self.tau
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn position(&self, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.positions[i * d..(i + 1) * d]
    }

    fn banded_a(&self, t_new: f64) -> BandedMatrix {
        let rows = assemble_l_rows(&self.lp.coeffs, self.grid, t_new);
        let bw = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |(j, _)| j.abs_diff(i)))
            .max()
            .unwrap_or(0);
        let mut a = BandedMatrix::zeros(self.grid.len(), bw, bw);
        for i in 0..self.grid.len() {
            a.add(i, i, 1.0);
            for &(j, v) in &rows[i] {
                a.add(i, j, -self.tau * v);
            }
        }
        a
    }

    fn csr_a(&self, t_new: f64) -> CsrMatrix {
        let mut rows = assemble_l_rows(&self.lp.coeffs, self.grid, t_new);
        for (i, row) in rows.iter_mut().enumerate() {
            for e in row.iter_mut() {
                e.1 = -self.tau * e.1;
            }
            if let Some(e) = row.iter_mut().find(|e| e.0 == i) {
                e.1 += 1.0;
            } else {
                row.push((i, 1.0));
            }
        }
        CsrMatrix::from_rows(rows)
    }

    /// Advances one step. Fails with a step-failure error (tau too
    /// large) when the linear solve does not converge or the new field
    /// is not finite.
    pub fn advance(&mut self) -> Result<()> {
        if self.index >= self.n {
            return Err(Error::Domain("stepper already at the final time".into()));
        }
        let i = self.index + 1;
        let t_old = self.tau * (i - 1) as f64;
        let t_new = self.tau * i as f64;
        let npts = self.grid.len();
        let channels = self.lp.coeffs.channels();

        // Noise operators and free data at the old time level.
        if self.noise_ops.is_none() || self.lp.coeffs.is_time_dependent() {
            self.noise_ops = Some(
                (0..channels)
                    .map(|k| {
                        CsrMatrix::from_rows(assemble_m_rows(&self.lp.coeffs, self.grid, t_old, k))
                    })
                    .collect(),
            );
        }
        let xi = self.noise.step_row(i - 1);
        for p in 0..npts {
            self.buf_rhs[p] = self.v[p] + self.tau * (self.lp.f)(t_old, self.position(p));
        }
        let m_ops = self.noise_ops.as_ref().unwrap();
        for (k, m_op) in m_ops.iter().enumerate().take(channels) {
            m_op.matvec_into(&self.v, &mut self.buf_mv);
            let xik = xi[k];
            if xik != 0.0 {
                for p in 0..npts {
                    self.buf_rhs[p] +=
                        (self.buf_mv[p] + (self.lp.g)(t_old, self.position(p), k)) * xik;
                }
            } else {
                // Still add g * 0 to keep the formula literal? g * 0 = 0.
                continue;
            }
        }

        // Drift operator at the new time level; cached when autonomous.
        let step_err = |residual: f64| Error::StepFailure { step: i, residual };
        let banded_solve = |a: &BandedMatrix, lu: &BandedLu, rhs: &[f64]| -> Result<Vec<f64>> {
            let mut x = rhs.to_vec();
            lu.solve_into(&mut x);
            let mut r = vec![0.0; rhs.len()];
            a.matvec_into(&x, &mut r);
            for (rp, bp) in r.iter_mut().zip(rhs) {
                *rp -= bp;
            }
            let res = norm2(&r);
            if !(res <= self.opts.lin_tol * (1.0 + norm2(rhs))) {
                return Err(step_err(res));
            }
            Ok(x)
        };
        let max_iter = self.opts.max_iter_factor * npts;
        let krylov_err = |e: Error| match e {
            Error::LinearSolve { residual, .. } => step_err(residual),
            other => other,
        };
        let solved: Vec<f64> = match &self.drift {
            DriftSolver::CachedBanded { a, lu } => banded_solve(a, lu, &self.buf_rhs)?,
            DriftSolver::Banded => {
                let a = self.banded_a(t_new);
                let lu = a.clone().factor().map_err(|_| step_err(f64::INFINITY))?;
                let x = banded_solve(&a, &lu, &self.buf_rhs)?;
                if !self.lp.coeffs.is_time_dependent() {
                    self.drift = DriftSolver::CachedBanded { a, lu };
                }
                x
            }
            DriftSolver::Krylov { cached: Some(a) } => {
                solve_linear(a, &self.buf_rhs, self.opts.lin_tol, max_iter, &self.opts)
                    .map_err(krylov_err)?
            }
            DriftSolver::Krylov { cached: None } => {
                let a = self.csr_a(t_new);
                let x = solve_linear(&a, &self.buf_rhs, self.opts.lin_tol, max_iter, &self.opts)
                    .map_err(krylov_err)?;
                if !self.lp.coeffs.is_time_dependent() {
                    self.drift = DriftSolver::Krylov { cached: Some(a) };
                }
                x
            }
        };
        if solved.iter().any(|v| !v.is_finite()) {
            return Err(step_err(f64::NAN));
        }
        self.v.copy_from_slice(&solved);
        self.index = i;
        Ok(())
    }
}

/// One implicit Euler step as a standalone operation (no caching);
/// `xi` is the increment row for this step.
pub fn implicit_euler_step(
    v_prev: &[f64],
    lp: &LocalizedProblem,
    grid: &Grid,
    xi: &[f64],
    tau: f64,
    step: usize,
    opts: &StepperOptions,
) -> Result<Vec<f64>> {
    let t_old = tau * (step - 1) as f64;
    let t_new = tau * step as f64;
    let npts = grid.len();
    let mut x = vec![0.0; grid.dim()];
    let mut rhs = vec![0.0; npts];
    for p in 0..npts {
        grid.position_into(p, &mut x);
        rhs[p] = v_prev[p] + tau * (lp.f)(t_old, &x);
    }
    for k in 0..lp.coeffs.channels() {
        let m = CsrMatrix::from_rows(assemble_m_rows(&lp.coeffs, grid, t_old, k));
        let mv = m.matvec(v_prev);
        for p in 0..npts {
            grid.position_into(p, &mut x);
            rhs[p] += (mv[p] + (lp.g)(t_old, &x, k)) * xi[k];
        }
    }
    let mut rows = assemble_l_rows(&lp.coeffs, grid, t_new);
    for (i, row) in rows.iter_mut().enumerate() {
        for e in row.iter_mut() {
            e.1 = -tau * e.1;
        }
        if let Some(e) = row.iter_mut().find(|e| e.0 == i) {
            e.1 += 1.0;
        } else {
            row.push((i, 1.0));
        }
    }
    let a = CsrMatrix::from_rows(rows);
    let v = solve_linear(&a, &rhs, opts.lin_tol, opts.max_iter_factor * npts, opts).map_err(
        |e| match e {
            Error::LinearSolve { residual, .. } => Error::StepFailure { step, residual },
            other => other,
        },
    )?;
    if v.iter().any(|u| !u.is_finite()) {
        return Err(Error::StepFailure {
            step,
            residual: f64::NAN,
        });
    }
    Ok(v)
}

/// A stored trajectory `v_0, ..., v_n` on one grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn terminal(&self) -> &[f64] {
        self.fields.last().expect("trajectory is never empty")
    }
}

/// Runs the full scheme, invoking the observer at every index
/// (including 0) and returning the terminal field.
pub fn run<F>(
    lp: &LocalizedProblem,
    grid: &Grid,
    noise: &NoisePath,
    tau: f64,
    n: usize,
    opts: &StepperOptions,
    mut observer: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let mut stepper = Stepper::new(lp, grid, noise, tau, n, opts.clone())?;
    observer(0, 0.0, stepper.values())?;
    for _ in 0..n {
        stepper.advance()?;
        observer(stepper.index(), stepper.time(), stepper.values())?;
    }
    Ok(stepper.values().to_vec())
}

/// Runs the scheme and stores every field.
pub fn run_collect(
    lp: &LocalizedProblem,
    grid: &Grid,
    noise: &NoisePath,
    tau: f64,
    n: usize,
    opts: &StepperOptions,
) -> Result<Trajectory> {
    let mut times = Vec::with_capacity(n + 1);
    let mut fields = Vec::with_capacity(n + 1);
    run(lp, grid, noise, tau, n, opts, |_, t, v| {
        times.push(t);
        fields.push(v.to_vec());
        Ok(())
    })?;
    Ok(Trajectory { times, fields })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::CutoffFn;
    use crate::problem::{zero_channel, zero_entry, zero_scalar};
    use crate::stencil::{build_grid, StencilSet};
    use std::sync::Arc;

    fn line_grid(h: f64, radius: f64) -> Grid {
        build_grid(&StencilSet::line(&[1]).unwrap(), h, radius).unwrap()
    }

    #[test]
    fn delta_differentiates_squares_exactly() {
        let grid = line_grid(0.25, 2.0);
        let f: Vec<f64> = (0..grid.len())
            .map(|i| grid.position(i)[0].powi(2))
            .collect();
        let df = apply_delta(&f, &grid, &[1], DeltaForm::CentralFirst);
        for i in 0..grid.len() {
            let x = grid.position(i)[0];
            if x.abs() < 2.0 - 0.25 {
                assert!((df[i] - 2.0 * x).abs() < 1e-13, "at {x}: {}", df[i]);
            }
        }
        // Constants difference to zero away from the boundary.
        let ones = vec![1.0; grid.len()];
        let d1 = apply_delta(&ones, &grid, &[1], DeltaForm::CentralFirst);
        for i in 1..grid.len() - 1 {
            assert_eq!(d1[i], 0.0);
        }
        // Zero offset is the identity.
        assert_eq!(apply_delta(&f, &grid, &[0], DeltaForm::CentralFirst), f);
    }

    #[test]
    fn displayed_form_differs_by_the_second_difference() {
        let grid = line_grid(0.5, 2.0);
        let f: Vec<f64> = (0..grid.len())
            .map(|i| grid.position(i)[0].powi(2))
            .collect();
        let displayed = apply_delta(&f, &grid, &[1], DeltaForm::Displayed);
        let h = 0.5;
        for i in 1..grid.len() - 1 {
            let want = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (2.0 * h);
            assert!((displayed[i] - want).abs() < 1e-14);
        }
    }

    fn laplacian_problem() -> LocalizedProblem {
        // fra(1,1) = 1, everything else zero, no cutoff.
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(|_, _, l, k| if l == 1 && k == 1 { 1.0 } else { 0.0 }),
            zero_entry(),
            1.0,
        )
        .autonomous();
        localize(
            &dc,
            &zero_scalar(),
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::identity(),
        )
    }

    #[test]
    fn assemble_composes_central_differences() {
        let lp = laplacian_problem();
        let grid = line_grid(0.5, 3.0);
        let rows = assemble_l_rows(&lp.coeffs, &grid, 0.0);
        let h = 0.5;
        let q = 1.0 / (4.0 * h * h);
        let mid = grid.index_of(&[0]).unwrap();
        let mut row = rows[mid].clone();
        row.sort_by_key(|e| e.0);
        let expect = vec![
            (grid.index_of(&[-2]).unwrap(), q),
            (mid, -2.0 * q),
            (grid.index_of(&[2]).unwrap(), q),
        ];
        assert_eq!(row, expect);
    }

    #[test]
    fn assemble_matches_apply_delta_on_basis_vectors() {
        // Matrix-free consistency with cutoff coefficients, whose
        // support sits well inside the box so intermediate stencil
        // reads stay representable.
        let st = StencilSet::line(&[1, 2]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st.clone(),
            1,
            Arc::new(|_, x: &[f64], l, k| (1.0 + (l + 2 * k) as f64) * (0.3 * x[0]).cos()),
            Arc::new(|_, x: &[f64], l, _| 0.5 * (l as f64) * (0.2 * x[0]).sin()),
            8.0,
        );
        let zeta = CutoffFn::smoothstep(1.0);
        let lp = localize(&dc, &zero_scalar(), &zero_scalar(), &zero_channel(), &zeta);
        let grid = build_grid(&st, 0.5, 6.0).unwrap();
        let ops = assemble(&lp.coeffs, &grid, 0.3);
        let vs: Vec<Vec<i64>> = st.vectors().to_vec();
        let mut xbuf = vec![0.0; 1];
        for j in (0..grid.len()).step_by(3) {
            let mut e = vec![0.0; grid.len()];
            e[j] = 1.0;
            // L e_j via composed apply_delta, weighted row by row.
            let mut want = vec![0.0; grid.len()];
            for (li, lv) in vs.iter().enumerate() {
                for (ki, kv) in vs.iter().enumerate() {
                    let inner = apply_delta(&e, &grid, kv, DeltaForm::CentralFirst);
                    let outer = apply_delta(&inner, &grid, lv, DeltaForm::CentralFirst);
                    for p in 0..grid.len() {
                        grid.position_into(p, &mut xbuf);
                        want[p] += lp.coeffs.fra(0.3, &xbuf, li, ki) * outer[p];
                    }
                }
            }
            let got = ops.l.matvec(&e);
            for p in 0..grid.len() {
                grid.position_into(p, &mut xbuf);
                if xbuf[0].abs() <= zeta.support_radius() {
                    assert!(
                        (got[p] - want[p]).abs() < 1e-12,
                        "row {p}: {} vs {}",
                        got[p],
                        want[p]
                    );
                } else {
                    assert_eq!(got[p], 0.0);
                }
            }
        }
    }

    #[test]
    fn row_sparsity_is_bounded() {
        let st = StencilSet::line(&[1, 2]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st.clone(),
            1,
            Arc::new(|_, _, _, _| 1.0),
            Arc::new(|_, _, _, _| 0.5),
            8.0,
        );
        let grid = build_grid(&st, 0.5, 5.0).unwrap();
        let ops = assemble(&dc, &grid, 0.0);
        let m = st.len() - 1;
        let l_bound = (2 * m + 1) * (2 * m + 1);
        let m_bound = 2 * m + 1;
        for i in 0..grid.len() {
            assert!(ops.l.row_nnz(i) <= l_bound);
            assert!(ops.m[0].row_nnz(i) <= m_bound);
        }
    }

    #[test]
    fn zero_order_identity() {
        // fra(0,0) = c constant: L = c * I.
        let st = StencilSet::line(&[1]).unwrap();
        let c = 0.7;
        let dc = crate::problem::DiscreteCoeffs::new(
            st.clone(),
            1,
            Arc::new(move |_, _, l, k| if l == 0 && k == 0 { c } else { 0.0 }),
            zero_entry(),
            1.0,
        );
        let grid = build_grid(&st, 0.5, 2.0).unwrap();
        let ops = assemble(&dc, &grid, 0.0);
        let x: Vec<f64> = (0..grid.len()).map(|i| i as f64).collect();
        let y = ops.l.matvec(&x);
        for i in 0..grid.len() {
            assert!((y[i] - c * x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_problem_keeps_field_constant() {
        let psi: ScalarFn = Arc::new(|_: f64, x: &[f64]| x[0].cos());
        let lp = localize(
            &crate::problem::DiscreteCoeffs::new(
                StencilSet::line(&[1]).unwrap(),
                1,
                zero_entry(),
                zero_entry(),
                1.0,
            ),
            &psi,
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::identity(),
        );
        let grid = line_grid(0.25, 2.0);
        let noise = NoisePath::generate(3, 0, 8, 0.125, 1).unwrap();
        let traj = run_collect(&lp, &grid, &noise, 0.125, 8, &StepperOptions::default()).unwrap();
        for field in &traj.fields {
            assert_eq!(field, &traj.fields[0]);
        }
    }

    #[test]
    fn pure_zero_order_scalar_recursion() {
        // fra(0,0) = c, frb(0,1) = mu: v_i = v_{i-1} (1 + mu xi_i) / (1 - tau c).
        let c = 0.4;
        let mu = 0.3;
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(move |_, _, l, k| if l == 0 && k == 0 { c } else { 0.0 }),
            Arc::new(move |_, _, l, _| if l == 0 { mu } else { 0.0 }),
            1.0,
        )
        .autonomous();
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| 1.0 + 0.1 * x[0]);
        let lp = localize(
            &dc,
            &psi,
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::identity(),
        );
        let grid = line_grid(0.5, 1.0);
        let n = 16;
        let tau = 1.0 / n as f64;
        let noise = NoisePath::generate(11, 2, n, tau, 1).unwrap();
        let traj = run_collect(&lp, &grid, &noise, tau, n, &StepperOptions::default()).unwrap();
        // Scalar oracle per grid point.
        for p in 0..grid.len() {
            let mut u = psi(0.0, &grid.position(p));
            for i in 0..n {
                u = u * (1.0 + mu * noise.increment(i, 0)) / (1.0 - tau * c);
            }
            assert!(
                (traj.terminal()[p] - u).abs() < 1e-12 * (1.0 + u.abs()),
                "point {p}: {} vs {u}",
                traj.terminal()[p]
            );
        }
    }

    #[test]
    fn paper_example_display_is_reproduced() {
        // One step of the worked example's displayed recursion, coded
        // verbatim, must agree with the stepper.
        let r = 4.0;
        let zeta = CutoffFn::arctan_bump(r);
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st.clone(),
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
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| 1.0 / (1.0 + x[0] * x[0]));
        let lp = localize(&dc, &psi, &zero_scalar(), &zero_channel(), &zeta);
        let h = 0.25;
        let grid = solver_grid(&lp, h, 10.0).unwrap();
        let n = 4;
        let tau = 0.25;
        let noise = NoisePath::generate(21, 5, n, tau, 1).unwrap();

        let mut stepper =
            Stepper::new(&lp, &grid, &noise, tau, n, StepperOptions::default()).unwrap();
        stepper.advance().unwrap();

        // Verbatim: u_i = a (dd u_i) tau + b (d u_{i-1}) xi + u_{i-1},
        // with a = zeta^2 sin^2 and b = zeta sin, solved for u_i.
        let npts = grid.len();
        let u0: Vec<f64> = (0..npts)
            .map(|p| (lp.psi)(0.0, &grid.position(p)))
            .collect();
        let a_coef: Vec<f64> = (0..npts)
            .map(|p| {
                let x = grid.position(p)[0];
                zeta.eval1(x).powi(2) * x.sin().powi(2)
            })
            .collect();
        let b_coef: Vec<f64> = (0..npts)
            .map(|p| {
                let x = grid.position(p)[0];
                zeta.eval1(x) * x.sin()
            })
            .collect();
        let du0 = apply_delta(&u0, &grid, &[1], DeltaForm::CentralFirst);
        let xi = noise.increment(0, 0);
        // Build (I - tau A dd) u_1 = u_0 + b (d u_0) xi as a dense solve.
        let q = 1.0 / (4.0 * h * h);
        let mut dense = vec![vec![0.0; npts]; npts];
        for p in 0..npts {
            dense[p][p] = 1.0 + tau * a_coef[p] * 2.0 * q;
            if let Some(j) = grid.neighbor(p, &[2], 1) {
                dense[p][j] -= tau * a_coef[p] * q;
            }
            if let Some(j) = grid.neighbor(p, &[2], -1) {
                dense[p][j] -= tau * a_coef[p] * q;
            }
        }
        let rhs: Vec<f64> = (0..npts).map(|p| u0[p] + b_coef[p] * du0[p] * xi).collect();
        // Gauss elimination.
        let mut m = dense;
        let mut x = rhs;
        for j in 0..npts {
            let p = (j..npts)
                .max_by(|&r, &s| m[r][j].abs().total_cmp(&m[s][j].abs()))
                .unwrap();
            m.swap(j, p);
            x.swap(j, p);
            for i in j + 1..npts {
                let l = m[i][j] / m[j][j];
                for k in j..npts {
                    m[i][k] -= l * m[j][k];
                }
                x[i] -= l * x[j];
            }
        }
        for j in (0..npts).rev() {
            for k in j + 1..npts {
                x[j] -= m[j][k] * x[k];
            }
            x[j] /= m[j][j];
        }
        for p in 0..npts {
            assert!(
                (stepper.values()[p] - x[p]).abs() < 1e-9,
                "point {p}: {} vs {}",
                stepper.values()[p],
                x[p]
            );
        }
    }

    #[test]
    fn support_confinement_is_exact() {
        let zeta = CutoffFn::arctan_bump(2.0);
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
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
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| 1.0 / (1.0 + x[0] * x[0]));
        let f: ScalarFn = Arc::new(|t, x: &[f64]| t + x[0].cos());
        let g: ChannelFn = Arc::new(|_, x: &[f64], _| 0.3 * x[0]);
        let lp = localize(&dc, &psi, &f, &g, &zeta);
        let h = 0.25;
        let grid = solver_grid(&lp, h, 10.0).unwrap();
        let n = 10;
        let tau = 0.1;
        let noise = NoisePath::generate(33, 0, n, tau, 1).unwrap();
        let supp = zeta.support_radius();
        run(
            &lp,
            &grid,
            &noise,
            tau,
            n,
            &StepperOptions::default(),
            |_, _, v| {
                for p in 0..grid.len() {
                    if grid.position(p)[0].abs() > supp {
                        assert_eq!(
                            v[p],
                            0.0,
                            "nonzero outside support at {}",
                            grid.position(p)[0]
                        );
                    }
                }
                Ok(())
            },
        )
        .unwrap();
    }

    #[test]
    fn deterministic_subcase_ignores_the_seed() {
        // sigma = mu = g = 0: trajectories are bit-identical across seeds.
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(|_, _, l, k| if l == 1 && k == 1 { 0.5 } else { 0.0 }),
            zero_entry(),
            1.0,
        )
        .autonomous();
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| (-x[0] * x[0] / 2.0).exp());
        let lp = localize(
            &dc,
            &psi,
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::smoothstep(3.0),
        );
        let grid = solver_grid(&lp, 0.2, 8.0).unwrap();
        let n = 20;
        let tau = 0.01;
        let opts = StepperOptions::default();
        let a = run_collect(
            &lp,
            &grid,
            &NoisePath::generate(1, 0, n, tau, 1).unwrap(),
            tau,
            n,
            &opts,
        )
        .unwrap();
        let b = run_collect(
            &lp,
            &grid,
            &NoisePath::generate(999, 7, n, tau, 1).unwrap(),
            tau,
            n,
            &opts,
        )
        .unwrap();
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn degenerate_transport_is_accepted() {
        // 2 fra - frb^2 = 0: the scheme must run, not error.
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(|_, _, l, k| if l == 1 && k == 1 { 0.5 } else { 0.0 }),
            Arc::new(|_, _, l, _| if l == 1 { 1.0 } else { 0.0 }),
            1.0,
        )
        .autonomous();
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| 1.0 / (1.0 + x[0] * x[0]));
        let lp = localize(
            &dc,
            &psi,
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::arctan_bump(4.0),
        );
        let grid = solver_grid(&lp, 0.1, 10.0).unwrap();
        let n = 50;
        let tau = 0.01;
        let noise = NoisePath::generate(5, 1, n, tau, 1).unwrap();
        let v = run(
            &lp,
            &grid,
            &noise,
            tau,
            n,
            &StepperOptions::default(),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn singular_step_reports_failure() {
        // fra(0,0) = 1 with tau = 1 makes I - tau L the zero matrix.
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(|_, _, l, k| if l == 0 && k == 0 { 1.0 } else { 0.0 }),
            zero_entry(),
            1.0,
        );
        let psi: ScalarFn = Arc::new(|_, _| 1.0);
        let lp = localize(
            &dc,
            &psi,
            &zero_scalar(),
            &zero_channel(),
            &CutoffFn::identity(),
        );
        let grid = line_grid(0.5, 1.0);
        let noise = NoisePath::generate(1, 0, 1, 1.0, 1).unwrap();
        let r = run(
            &lp,
            &grid,
            &noise,
            1.0,
            1,
            &StepperOptions::default(),
            |_, _, _| Ok(()),
        );
        assert!(matches!(r, Err(Error::StepFailure { .. })));
    }

    #[test]
    fn implicit_euler_step_matches_stepper() {
        let st = StencilSet::line(&[1]).unwrap();
        let dc = crate::problem::DiscreteCoeffs::new(
            st,
            1,
            Arc::new(|t, x: &[f64], l, k| {
                if l == 1 && k == 1 {
                    0.3 + 0.1 * t + 0.05 * x[0].cos()
                } else {
                    0.0
                }
            }),
            Arc::new(|_, x: &[f64], l, _| if l == 1 { 0.2 * x[0].sin() } else { 0.0 }),
            1.0,
        );
        let psi: ScalarFn = Arc::new(|_, x: &[f64]| (-x[0] * x[0]).exp());
        let zeta = CutoffFn::smoothstep(2.0);
        let lp = localize(&dc, &psi, &zero_scalar(), &zero_channel(), &zeta);
        let grid = solver_grid(&lp, 0.25, 8.0).unwrap();
        let n = 3;
        let tau = 0.05;
        let noise = NoisePath::generate(8, 0, n, tau, 1).unwrap();
        let opts = StepperOptions::default();
        let mut stepper = Stepper::new(&lp, &grid, &noise, tau, n, opts.clone()).unwrap();
        let mut v = stepper.values().to_vec();
        for i in 1..=n {
            stepper.advance().unwrap();
            v = implicit_euler_step(&v, &lp, &grid, noise.step_row(i - 1), tau, i, &opts).unwrap();
            for p in 0..grid.len() {
                assert!((stepper.values()[p] - v[p]).abs() < 1e-11);
            }
        }
    }
}
