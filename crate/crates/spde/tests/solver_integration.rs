//! Cross-module solver checks that are too large for unit tests: the
//! two-dimensional Krylov path against the exact heat kernel, the
//! transport run against its closed-form solution, and the flow
//! inversion postcondition on the degenerate worked problem.

use spde::cutoff::CutoffFn;
use spde::noise::{aux_stream, NoisePath};
use spde::oracle::{invert_flow, reduced_coeffs, simulate_flow, DerivativeMode, FlowConfig};
use spde::problem::{
    default_probes, degenerate_structure, zero_channel, zero_entry, zero_scalar, DiscreteCoeffs,
    ScalarFn,
};
use spde::problems::builtin;
use spde::solver::{localize, run, solver_grid, StepperOptions};
use spde::stencil::StencilSet;
use std::sync::Arc;

#[test]
fn two_dimensional_heat_runs_through_the_krylov_path() {
    // du = (1/2) (D_11 + D_22) u dt with a Gaussian initial value; the
    // exact solution is (1+t)^{-1} exp(-|x|^2 / (2 (1+t))). The lex
    // ordering of a 2D grid leaves the drift matrix far from banded,
    // which forces the restarted-Krylov branch of the stepper.
    let st = StencilSet::new(2, vec![vec![1, 0], vec![0, 1]]).unwrap();
    let dc = DiscreteCoeffs::new(
        st,
        1,
        Arc::new(|_, _, l, k| if l == k && l != 0 { 0.5 } else { 0.0 }),
        zero_entry(),
        1.0,
    )
    .autonomous();
    let psi: ScalarFn = Arc::new(|_, x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp());
    let zeta = CutoffFn::smoothstep(4.0);
    let lp = localize(&dc, &psi, &zero_scalar(), &zero_channel(), &zeta);
    let h = 0.5;
    let grid = solver_grid(&lp, h, 9.0).unwrap();
    assert!(grid.len() > 500, "grid has {} points", grid.len());
    let t_end = 0.2;
    let n = 8;
    let tau = t_end / n as f64;
    let noise = NoisePath::generate(1, 0, n, tau, 1).unwrap();
    let terminal = run(
        &lp,
        &grid,
        &noise,
        tau,
        n,
        &StepperOptions::default(),
        |_, _, _| Ok(()),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for q in grid.points_in_ball(2.0) {
        let x = grid.position(q);
        let exact =
            (1.0 + t_end).powi(-1) * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * (1.0 + t_end))).exp();
        worst = worst.max((terminal[q] - exact).abs());
    }
    // Second-order spatial error at h = 0.5 plus first-order time error.
    assert!(worst < 0.03, "2d heat error {worst}");
    assert!(worst > 0.0);
}

#[test]
fn transport_run_tracks_the_shifted_initial_value() {
    // v_n(x) close to psi(x + w_T) pathwise at h = 0.05, tau = 1e-3,
    // R = 10, in max norm over B_9. The error constant is pathwise
    // (roughly C(omega) sqrt(tau)); the bound below holds for this
    // fixed path.
    let p = builtin("stochastic-transport").unwrap();
    let zeta = CutoffFn::arctan_bump(10.0);
    let lp = localize(
        &p.discrete,
        &p.continuous.psi,
        &p.continuous.f,
        &p.continuous.g,
        &zeta,
    );
    let grid = solver_grid(&lp, 0.05, 13.0).unwrap();
    let n = 1000;
    let tau = 1e-3;
    let path = NoisePath::generate(1, 0, n, tau, 1).unwrap();
    let terminal = run(
        &lp,
        &grid,
        &path,
        tau,
        n,
        &StepperOptions::default(),
        |_, _, _| Ok(()),
    )
    .unwrap();
    let w_t = path.value(n, 0);
    let worst = grid
        .points_in_ball(9.0)
        .into_iter()
        .map(|q| {
            let y = grid.position(q)[0] + w_t;
            (terminal[q] - 1.0 / (1.0 + y * y)).abs()
        })
        .fold(0.0f64, f64::max);
    assert!(worst <= 0.02, "pathwise max-norm error {worst}");
}

#[test]
fn example_inversion_satisfies_its_postcondition() {
    // On the degenerate worked problem with one fixed path, the
    // returned preimage reproduces the target within the tolerance.
    let p = builtin("paper-example").unwrap();
    let probes = default_probes(1, 1.0, 6.0);
    let ds = degenerate_structure(&p.continuous, &probes).unwrap();
    let rc = reduced_coeffs(
        &p.continuous,
        &ds,
        &DerivativeMode::Analytic,
        p.derivatives.as_ref(),
    )
    .unwrap();
    let n = 64;
    let dt = 1.0 / n as f64;
    let w = NoisePath::generate(17, 0, n, dt, 1).unwrap();
    let wa = NoisePath::generate(17, aux_stream(0, 0), n, dt, 1).unwrap();
    let cfg = FlowConfig {
        inv_tol: 1e-8,
        ..FlowConfig::default()
    };
    for x in [0.4, 1.7, -0.9] {
        let y = invert_flow(&rc, x, &w, &wa, n, &cfg).unwrap();
        let reached = simulate_flow(&rc, y, &w, &wa, n).unwrap();
        assert!(
            (reached - x).abs() <= cfg.inv_tol,
            "x = {x}: residual {}",
            (reached - x).abs()
        );
    }
}
