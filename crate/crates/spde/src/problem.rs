//! Continuous equation data, stencil-indexed discrete coefficients,
//! the compatibility map between them, and parabolicity checks.
//!
//! The equation reads `du = (Lu + f) dt + sum_k (M^k u + g^k) dw^k` with
//! `L = a^{ij} D_i D_j + b^i D_i + c` and `M^k = sigma^{ik} D_i + mu^k`,
//! driven by finitely many Wiener channels. Coefficients and data are
//! supplied as pure pointwise closures; there is no symbolic algebra.
//! Smoothness beyond spot-checked boundedness is the caller's
//! obligation.

use crate::error::{Error, Result};
use crate::stencil::StencilSet;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Scalar field `(t, x) -> R`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Indexed family of scalar fields, e.g. `b^i` or `g^k`: `(t, x, index)`.
pub type ChannelFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;
/// Doubly indexed family, e.g. `a^{ij}` or `sigma^{ik}`: `(t, x, i, j)`.
pub type EntryFn = Arc<dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync>;

/// Returns a closure that is identically zero (shared convenience).
pub fn zero_scalar() -> ScalarFn {
    Arc::new(|_, _| 0.0)
}

pub fn zero_channel() -> ChannelFn {
    Arc::new(|_, _, _| 0.0)
}

pub fn zero_entry() -> EntryFn {
    Arc::new(|_, _, _, _| 0.0)
}

/// The data tuple of the continuous problem:
/// `(psi, a, b, c, sigma, mu, f, g)` on `[0, T] x R^d` with `channels`
/// Wiener processes. `a` is symmetrized on evaluation.
#[derive(Clone)]
pub struct ContinuousData {
    pub dim: usize,
    pub channels: usize,
    pub horizon: f64,
    pub psi: ScalarFn,
    a: EntryFn,
    pub b: ChannelFn,
    pub c: ScalarFn,
    pub sigma: EntryFn,
    pub mu: ChannelFn,
    pub f: ScalarFn,
    pub g: ChannelFn,
    /// Optional analytic square root of `alpha = 2a - sigma sigma^T`,
    /// registered when a closed form exists (the characteristics oracle
    /// also needs its derivative, supplied separately).
    pub rho_override: Option<EntryFn>,
}

impl ContinuousData {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        channels: usize,
        horizon: f64,
        psi: ScalarFn,
        a: EntryFn,
        b: ChannelFn,
        c: ScalarFn,
        sigma: EntryFn,
        mu: ChannelFn,
        f: ScalarFn,
        g: ChannelFn,
    ) -> Self {
        assert!(dim > 0 && channels > 0 && horizon > 0.0);
        Self {
            dim,
            channels,
            horizon,
            psi,
            a,
            b,
            c,
            sigma,
            mu,
            f,
            g,
            rho_override: None,
        }
    }

    pub fn with_rho_override(mut self, rho: EntryFn) -> Self {
        self.rho_override = Some(rho);
        self
    }

    /// `a^{ij}`, symmetrized on evaluation.
    pub fn a_entry(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
        0.5 * ((self.a)(t, x, i, j) + (self.a)(t, x, j, i))
    }

    /// Fills `out` with the (symmetric) matrix `a(t, x)`.
    pub fn a_matrix(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] = self.a_entry(t, x, i, j);
            }
        }
    }

    /// Fills `out` with `alpha = 2a - sigma sigma^T` at `(t, x)`.
    pub fn alpha_matrix(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        self.a_matrix(t, x, out);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = 0.0;
                for k in 0..self.channels {
                    s += (self.sigma)(t, x, i, k) * (self.sigma)(t, x, j, k);
                }
                out[(i, j)] = 2.0 * out[(i, j)] - s;
            }
        }
    }

    pub fn sigma_entry(&self, t: f64, x: &[f64], i: usize, k: usize) -> f64 {
        (self.sigma)(t, x, i, k)
    }
}

/// Stencil-indexed coefficients of the difference operators
/// `L^h = sum fra(lambda, kappa) delta_lambda delta_kappa` and
/// `M^{h,k} = sum frb(lambda, k) delta_lambda`. Indices are ordinals
/// into the stencil's vector list (0 = zero vector).
#[derive(Clone)]
pub struct DiscreteCoeffs {
    stencil: StencilSet,
    channels: usize,
    fra: EntryFn,
    frb: EntryFn,
    bound: f64,
    time_dependent: bool,
}

impl DiscreteCoeffs {
    /// `fra(t, x, lambda, kappa)` and `frb(t, x, lambda, k)` with the
    /// stated uniform bound `K`: `|fra| <= K`, `sum_k frb^2 <= K^2`.
    pub fn new(
        stencil: StencilSet,
        channels: usize,
        fra: EntryFn,
        frb: EntryFn,
        bound: f64,
    ) -> Self {
        assert!(channels > 0 && bound > 0.0);
        Self {
            stencil,
            channels,
            fra,
            frb,
            bound,
            time_dependent: true,
        }
    }

    /// Marks the coefficients as independent of `t`, enabling operator
    /// and factorization caching in the time stepper.
    pub fn autonomous(mut self) -> Self {
        self.time_dependent = false;
        self
    }

    pub fn stencil(&self) -> &StencilSet {
        &self.stencil
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    #[inline]
    pub fn fra(&self, t: f64, x: &[f64], lambda: usize, kappa: usize) -> f64 {
        (self.fra)(t, x, lambda, kappa)
    }

    #[inline]
    pub fn frb(&self, t: f64, x: &[f64], lambda: usize, channel: usize) -> f64 {
        (self.frb)(t, x, lambda, channel)
    }

    pub fn fra_fn(&self) -> EntryFn {
        self.fra.clone()
    }

    pub fn frb_fn(&self) -> EntryFn {
        self.frb.clone()
    }

    /// Same stencil/channels/bound with replacement coefficient
    /// closures (used by the cutoff, which never increases the bound).
    pub fn with_coeffs(&self, fra: EntryFn, frb: EntryFn) -> Self {
        Self {
            stencil: self.stencil.clone(),
            channels: self.channels,
            fra,
            frb,
            bound: self.bound,
            time_dependent: self.time_dependent,
        }
    }

    /// Spot-checks the bound `K` at the given points.
    pub fn check_bounds(&self, samples: &[(f64, Vec<f64>)]) -> Result<()> {
        let tol = 1.0 + 1e-12;
        for (t, x) in samples {
            for l in 0..self.stencil.len() {
                for k in 0..self.stencil.len() {
                    let v = self.fra(*t, x, l, k);
                    if !(v.abs() <= self.bound * tol) {
                        return Err(Error::Domain(format!(
                            "fra({l},{k}) = {v} exceeds bound {} at t={t}, x={x:?}",
                            self.bound
                        )));
                    }
                }
                let s: f64 = (0..self.channels)
                    .map(|k| self.frb(*t, x, l, k).powi(2))
                    .sum();
                if !(s <= self.bound * self.bound * tol) {
                    return Err(Error::Domain(format!(
                        "sum_k frb({l},k)^2 = {s} exceeds bound^2 {} at t={t}, x={x:?}",
                        self.bound * self.bound
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The continuous coefficients induced by discrete ones through the
/// compatibility identities:
/// `a = sum fra(l,k) l (x) k` over nonzero pairs (symmetrized),
/// `b^i = sum (fra(0,l) + fra(l,0)) l^i`, `c = fra(0,0)`,
/// `sigma^{ik} = sum frb(l,k) l^i`, `mu^k = frb(0,k)`.
pub struct DerivedCoeffs {
    pub a: EntryFn,
    pub b: ChannelFn,
    pub c: ScalarFn,
    pub sigma: EntryFn,
    pub mu: ChannelFn,
}

pub fn derive_continuous(dc: &DiscreteCoeffs) -> DerivedCoeffs {
    let vectors: Arc<Vec<Vec<i64>>> = Arc::new(dc.stencil().vectors().to_vec());
    let n = vectors.len();

    let fra = dc.fra_fn();
    let v = vectors.clone();
    let a: EntryFn = Arc::new(move |t, x, i, j| {
        let mut sum = 0.0;
        for l in 1..n {
            for k in 1..n {
                let w = fra(t, x, l, k);
                if w != 0.0 {
                    // Symmetrized tensor product.
                    sum += w * 0.5 * ((v[l][i] * v[k][j]) as f64 + (v[l][j] * v[k][i]) as f64);
                }
            }
        }
        sum
    });

    let fra = dc.fra_fn();
    let v = vectors.clone();
    let b: ChannelFn = Arc::new(move |t, x, i| {
        (1..n)
            .map(|l| (fra(t, x, 0, l) + fra(t, x, l, 0)) * v[l][i] as f64)
            .sum()
    });

    let fra = dc.fra_fn();
    let c: ScalarFn = Arc::new(move |t, x| fra(t, x, 0, 0));

    let frb = dc.frb_fn();
    let v = vectors.clone();
    let sigma: EntryFn =
        Arc::new(move |t, x, i, k| (1..n).map(|l| frb(t, x, l, k) * v[l][i] as f64).sum());

    let frb = dc.frb_fn();
    let mu: ChannelFn = Arc::new(move |t, x, k| frb(t, x, 0, k));

    DerivedCoeffs { a, b, c, sigma, mu }
}

/// Outcome of the discrete parabolicity spot check.
#[derive(Debug, Clone)]
pub struct ParabolicityReport {
    pub pass: bool,
    pub worst_eigenvalue: f64,
    pub witness: (f64, Vec<f64>),
    pub tolerance: f64,
}

/// At each sample point forms `S = 2 fra - frb frb^T` over the nonzero
/// stencil vectors (symmetrized) and checks that its minimum eigenvalue
/// stays above `-psd_tol` with `psd_tol = 1e-12 (1 + max |S|)`.
pub fn check_discrete_parabolicity(
    dc: &DiscreteCoeffs,
    samples: &[(f64, Vec<f64>)],
) -> Result<ParabolicityReport> {
    if samples.is_empty() {
        return Err(Error::Domain(
            "parabolicity check needs at least one sample".into(),
        ));
    }
    let m = dc.stencil().len() - 1; // nonzero vectors
    let mut worst = f64::INFINITY;
    let mut witness = samples[0].clone();
    let mut tolerance = 0.0f64;
    for (t, x) in samples {
        let mut s = DMatrix::<f64>::zeros(m, m);
        for l in 0..m {
            for k in 0..m {
                let mut v = 2.0 * dc.fra(*t, x, l + 1, k + 1);
                for ch in 0..dc.channels() {
                    v -= dc.frb(*t, x, l + 1, ch) * dc.frb(*t, x, k + 1, ch);
                }
                s[(l, k)] = v;
            }
        }
        let sym = 0.5 * (&s + s.transpose());
        let scale = sym.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-12 * (1.0 + scale);
        tolerance = tolerance.max(tol);
        let min_eig = nalgebra::SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < worst {
            worst = min_eig;
            witness = (*t, x.clone());
        }
    }
    Ok(ParabolicityReport {
        pass: worst >= -tolerance,
        worst_eigenvalue: worst,
        witness,
        tolerance,
    })
}

/// The degenerate-diffusion structure `alpha = 2a - sigma sigma^T` and
/// its symmetric nonnegative square root `rho`.
#[derive(Clone)]
pub struct DegenerateStructure {
    pub dim: usize,
    alpha: Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync>,
    rho: Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync>,
    /// All probe points had alpha exactly zero; the problem is fully
    /// degenerate and the auxiliary noise does not act.
    pub alpha_identically_zero: bool,
}

impl DegenerateStructure {
    pub fn alpha_into(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        (self.alpha)(t, x, out)
    }

    pub fn rho_into(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        (self.rho)(t, x, out)
    }

    /// Scalar fast path for one-dimensional problems.
    pub fn rho1(&self, t: f64, x: f64) -> f64 {
        let mut m = DMatrix::zeros(1, 1);
        (self.rho)(t, &[x], &mut m);
        m[(0, 0)]
    }
}

/// Symmetric nonnegative square root via eigendecomposition; negative
/// eigenvalues are clamped to zero before the root is taken.
fn matrix_sqrt_psd(m: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    if m.nrows() == 1 {
        out[(0, 0)] = m[(0, 0)].max(0.0).sqrt();
        return;
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    out.copy_from(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()));
}

/// Builds the degenerate structure, verifying nonnegativity of `alpha`
/// at the probe points: the minimum eigenvalue beyond
/// `-1e-12 (1 + |alpha|)` is a not-parabolic error naming the witness.
pub fn degenerate_structure(
    cd: &ContinuousData,
    probes: &[(f64, Vec<f64>)],
) -> Result<DegenerateStructure> {
    let dim = cd.dim;
    let mut identically_zero = true;
    for (t, x) in probes {
        let mut alpha = DMatrix::zeros(dim, dim);
        cd.alpha_matrix(*t, x, &mut alpha);
        let scale = alpha.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale != 0.0 {
            identically_zero = false;
        }
        let tol = 1e-12 * (1.0 + scale);
        let min_eig = if dim == 1 {
            alpha[(0, 0)]
        } else {
            nalgebra::SymmetricEigen::new(0.5 * (&alpha + alpha.transpose()))
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, &b| a.min(b))
        };
        if min_eig < -tol {
            return Err(Error::NotParabolic {
                t: *t,
                x: x.clone(),
                eigenvalue: min_eig,
            });
        }
    }

    let alpha_fn: Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync> = {
        let cd = cd.clone();
        Arc::new(move |t, x, out| cd.alpha_matrix(t, x, out))
    };
    let rho_fn: Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync> =
        if let Some(rho) = cd.rho_override.clone() {
            Arc::new(move |t, x, out| {
                for i in 0..out.nrows() {
                    for j in 0..out.ncols() {
                        out[(i, j)] = rho(t, x, i, j);
                    }
                }
            })
        } else {
            let cd = cd.clone();
            Arc::new(move |t, x, out| {
                let mut alpha = DMatrix::zeros(out.nrows(), out.ncols());
                cd.alpha_matrix(t, x, &mut alpha);
                matrix_sqrt_psd(&alpha, out);
            })
        };

    let ds = DegenerateStructure {
        dim,
        alpha: alpha_fn,
        rho: rho_fn,
        alpha_identically_zero: identically_zero,
    };
    // rho must be symmetric with rho rho = alpha at the probes, within
    // sqrt_tol = 1e-10 (1 + |alpha|); this also catches a wrong
    // analytic override before it can corrupt the characteristics.
    let mut rho = DMatrix::zeros(dim, dim);
    let mut alpha = DMatrix::zeros(dim, dim);
    for (t, x) in probes {
        ds.rho_into(*t, x, &mut rho);
        ds.alpha_into(*t, x, &mut alpha);
        let scale = alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-10 * (1.0 + scale);
        let square = &rho * &rho;
        for i in 0..dim {
            for j in 0..dim {
                if (rho[(i, j)] - rho[(j, i)]).abs() > tol
                    || (square[(i, j)] - 0.5 * (alpha[(i, j)] + alpha[(j, i)])).abs() > tol
                {
                    return Err(Error::Domain(format!(
                        "rho is not a symmetric square root of alpha at t={t}, x={x:?}"
                    )));
                }
            }
        }
    }
    Ok(ds)
}

/// Default probe lattice for parabolicity and degeneracy spot checks:
/// three times across the horizon crossed with an axis sweep.
pub fn default_probes(dim: usize, horizon: f64, radius: f64) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    for ti in 0..3 {
        let t = horizon * ti as f64 / 2.0;
        for k in -8..=8 {
            let s = radius * k as f64 / 8.0;
            for axis in 0..dim {
                let mut x = vec![0.0; dim];
                x[axis] = s;
                out.push((t, x));
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| a == b);
    out
}
