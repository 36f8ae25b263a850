//! Solver library for linear, possibly degenerate, parabolic stochastic
//! PDEs posed on the whole space.
//!
//! The pipeline: localize the problem with a smooth cutoff, discretize
//! in space by stencil finite differences, step in time by semi-implicit
//! Euler, and accelerate the spatial error by Richardson extrapolation.
//! A stochastic-characteristics Monte Carlo estimator provides an
//! independent cross-check, and the experiment layer measures
//! convergence orders in mesh size, step size, and truncation radius.
//!
//! Monte Carlo fan-out is data-parallel through rayon when the default
//! `parallel` feature is enabled; disabling it leaves a sequential
//! fallback with identical results.
//!
//! ```
//! use spde::cutoff::CutoffFn;
//! use spde::noise::NoisePath;
//! use spde::problems::builtin;
//! use spde::solver::{localize, run_collect, solver_grid, StepperOptions};
//!
//! let p = builtin("paper-example")?;
//! let zeta = CutoffFn::arctan_bump(10.0);
//! let lp = localize(&p.discrete, &p.continuous.psi, &p.continuous.f, &p.continuous.g, &zeta);
//! let grid = solver_grid(&lp, 0.1, 13.0)?;
//! let (tau, n) = (1e-2, 100);
//! let path = NoisePath::generate(1, 0, n, tau, 1)?;
//! let traj = run_collect(&lp, &grid, &path, tau, n, &StepperOptions::default())?;
//! let at_zero = traj.terminal()[grid.index_of(&[0]).unwrap()];
//! assert!((at_zero - 1.0).abs() < 1e-12); // coefficients vanish at x = 0
//! # Ok::<(), spde::Error>(())
//! ```

pub mod cutoff;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod linalg;
pub mod noise;
pub mod oracle;
pub mod par;
pub mod problem;
pub mod problems;
pub mod report;
pub mod richardson;
pub mod solver;
pub mod stencil;

pub use error::{Error, Result};
