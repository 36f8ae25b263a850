//! Richardson extrapolation across the `h / 2^i` ladder.
//!
//! The weights come from the row system `c V = (1, 0, ..., 0)` with the
//! Vandermonde matrix `V^{ij} = 4^{-(i-1)(j-1)}`, solved in exact
//! rational arithmetic: the system is tiny but ill-conditioned in
//! floats for deeper ladders, and the moment identities are asserted
//! exactly downstream. Combining solutions with these weights cancels
//! the even-power error terms `h^2, h^4, ..., h^{2r}`.

use crate::error::{Error, Result};
use crate::solver::Trajectory;
use crate::stencil::{restrict, Grid};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Maximum supported ladder depth; beyond this the weights are
/// astronomically large and the combination numerically useless.
pub const MAX_DEPTH: usize = 8;

/// Extrapolation weights `c_0 ... c_r`, kept as exact rationals with
/// float conversions alongside.
#[derive(Debug, Clone)]
pub struct ExtrapolationWeights {
    r: usize,
    rationals: Vec<BigRational>,
    floats: Vec<f64>,
}

impl ExtrapolationWeights {
    pub fn depth(&self) -> usize {
        self.r
    }

    pub fn rationals(&self) -> &[BigRational] {
        &self.rationals
    }

    pub fn floats(&self) -> &[f64] {
        &self.floats
    }

    pub fn len(&self) -> usize {
        self.rationals.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn big_pow4(e: usize) -> BigInt {
    BigInt::from(4u8).pow(e as u32)
}

/// Solves `sum_i c_i 4^{-i j} = delta_{j 0}` for `j = 0..=r` by exact
/// Gaussian elimination.
pub fn weights(r: usize) -> Result<ExtrapolationWeights> {
    if r > MAX_DEPTH {
        return Err(Error::Domain(format!(
            "extrapolation depth {r} exceeds the supported maximum {MAX_DEPTH}"
        )));
    }
    let n = r + 1;
    // Augmented system (V^T | e_0): row j is sum_i 4^{-i j} c_i = delta_{j0}.
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|j| {
            let mut row: Vec<BigRational> = (0..n)
                .map(|i| BigRational::new(BigInt::one(), big_pow4(i * j)))
                .collect();
            row.push(if j == 0 {
                BigRational::one()
            } else {
                BigRational::zero()
            });
            row
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&row| !m[row][col].is_zero())
            .expect("Vandermonde system is nonsingular");
        m.swap(col, pivot_row);
        let pivot = m[col][col].clone();
        for entry in m[col].iter_mut() {
            *entry /= pivot.clone();
        }
        for row in 0..n {
            if row != col && !m[row][col].is_zero() {
                let factor = m[row][col].clone();
                for k in 0..=n {
                    let sub = factor.clone() * m[col][k].clone();
                    m[row][k] -= sub;
                }
            }
        }
    }
    let rationals: Vec<BigRational> = (0..n).map(|i| m[i][n].clone()).collect();

    // The defining identities must hold exactly in rationals.
    for j in 0..n {
        let sum: BigRational = rationals
            .iter()
            .enumerate()
            .map(|(i, c)| c * BigRational::new(BigInt::one(), big_pow4(i * j)))
            .sum();
        let expect = if j == 0 {
            BigRational::one()
        } else {
            BigRational::zero()
        };
        assert_eq!(sum, expect, "moment condition {j} violated");
    }

    let floats = rationals
        .iter()
        .map(|c| c.to_f64().expect("weight fits in f64"))
        .collect();
    Ok(ExtrapolationWeights {
        r,
        rationals,
        floats,
    })
}

/// Formats a rational weight as `p/q`.
pub fn format_rational(c: &BigRational) -> String {
    if c.denom().is_one() || c.denom() == &(-BigInt::one()) {
        format!("{}", c.numer())
    } else if c.denom().is_negative() {
        format!("{}/{}", -c.numer(), -c.denom())
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

/// Combines trajectories computed at `h / 2^0, ..., h / 2^r` on nested
/// grids (same box) into the weighted mixture on the coarsest grid, at
/// every time index.
pub fn extrapolate(
    trajectories: &[Trajectory],
    grids: &[&Grid],
    weights: &ExtrapolationWeights,
) -> Result<Trajectory> {
    if trajectories.len() != weights.len() || grids.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trajectories / {} grids for {} weights",
            trajectories.len(),
            grids.len(),
            weights.len()
        )));
    }
    let coarse = grids[0];
    let steps = trajectories[0].len();
    for traj in trajectories {
        if traj.len() != steps {
            return Err(Error::ShapeMismatch(
                "trajectories cover different numbers of time levels".into(),
            ));
        }
    }
    let mut fields = Vec::with_capacity(steps);
    for i in 0..steps {
        let mut combined = vec![0.0; coarse.len()];
        for (j, traj) in trajectories.iter().enumerate() {
            let on_coarse = restrict(&traj.fields[i], grids[j], coarse)?;
            let w = weights.floats()[j];
            for (acc, v) in combined.iter_mut().zip(&on_coarse) {
                *acc += w * v;
            }
        }
        fields.push(combined);
    }
    Ok(Trajectory {
        times: trajectories[0].times.clone(),
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::{build_grid, StencilSet};

    #[test]
    fn depth_zero_is_trivial() {
        let w = weights(0).unwrap();
        assert_eq!(w.floats(), &[1.0]);
        assert!(w.rationals()[0].is_one());
    }

    #[test]
    fn depth_one_is_the_four_thirds_mixture() {
        let w = weights(1).unwrap();
        let third = BigRational::new(BigInt::from(-1), BigInt::from(3));
        let four_thirds = BigRational::new(BigInt::from(4), BigInt::from(3));
        assert_eq!(w.rationals(), &[third, four_thirds]);
        assert_eq!(format_rational(&w.rationals()[0]), "-1/3");
        assert_eq!(format_rational(&w.rationals()[1]), "4/3");
    }

    #[test]
    fn depth_two_by_exact_elimination() {
        let w = weights(2).unwrap();
        let expect = [
            BigRational::new(BigInt::from(1), BigInt::from(45)),
            BigRational::new(BigInt::from(-4), BigInt::from(9)),
            BigRational::new(BigInt::from(64), BigInt::from(45)),
        ];
        assert_eq!(w.rationals(), &expect);
    }

    #[test]
    fn moment_conditions_hold_for_all_supported_depths() {
        for r in 0..=MAX_DEPTH {
            let w = weights(r).unwrap();
            // Exactness in rationals is asserted inside weights();
            // the float conversions satisfy them to near round-off.
            let scale: f64 = w.floats().iter().map(|c| c.abs()).sum();
            for j in 0..=r {
                let sum: f64 = w
                    .floats()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * 0.25f64.powi((i * j) as i32))
                    .sum();
                let expect = if j == 0 { 1.0 } else { 0.0 };
                assert!((sum - expect).abs() <= 1e-14 * scale, "r={r} j={j}: {sum}");
            }
        }
        assert!(weights(MAX_DEPTH + 1).is_err());
    }

    fn grids_for(r: usize, h: f64, radius: f64) -> Vec<Grid> {
        let st = StencilSet::line(&[1]).unwrap();
        (0..=r)
            .map(|i| build_grid(&st, h / (1 << i) as f64, radius).unwrap())
            .collect()
    }

    fn synthetic_trajectory(grid: &Grid, phi: impl Fn(f64) -> f64, steps: usize) -> Trajectory {
        let times: Vec<f64> = (0..steps).map(|i| i as f64).collect();
        let fields = (0..steps)
            .map(|_| (0..grid.len()).map(|p| phi(grid.position(p)[0])).collect())
            .collect();
        Trajectory { times, fields }
    }

    #[test]
    fn identical_inputs_pass_through() {
        let w = weights(1).unwrap();
        let grids = grids_for(1, 0.5, 2.0);
        let trajs: Vec<Trajectory> = grids
            .iter()
            .map(|g| synthetic_trajectory(g, |x| x.cos(), 3))
            .collect();
        let refs: Vec<&Grid> = grids.iter().collect();
        let out = extrapolate(&trajs, &refs, &w).unwrap();
        for i in 0..3 {
            for p in 0..grids[0].len() {
                let want = grids[0].position(p)[0].cos();
                assert!((out.fields[i][p] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quadratic_error_term_is_annihilated() {
        // v^{h/2^j} = phi + (h/2^j)^2 e: depth 1 recovers phi exactly.
        let h = 0.5;
        let w = weights(1).unwrap();
        let grids = grids_for(1, h, 2.0);
        let trajs: Vec<Trajectory> = grids
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let hj = h / (1 << j) as f64;
                synthetic_trajectory(g, move |x| x.sin() + hj * hj * (1.0 + x * x), 2)
            })
            .collect();
        let refs: Vec<&Grid> = grids.iter().collect();
        let out = extrapolate(&trajs, &refs, &w).unwrap();
        for p in 0..grids[0].len() {
            let x = grids[0].position(p)[0];
            assert!((out.fields[0][p] - x.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn fourth_order_ladder_is_annihilated_at_depth_two() {
        let h = 0.4;
        let w = weights(2).unwrap();
        let grids = grids_for(2, h, 2.0);
        let trajs: Vec<Trajectory> = grids
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let hj = h / (1 << j) as f64;
                synthetic_trajectory(
                    g,
                    move |x| x.cos() + hj * hj * (0.5 + x) + hj.powi(4) * (1.0 - x),
                    2,
                )
            })
            .collect();
        let refs: Vec<&Grid> = grids.iter().collect();
        let out = extrapolate(&trajs, &refs, &w).unwrap();
        for p in 0..grids[0].len() {
            let x = grids[0].position(p)[0];
            assert!(
                (out.fields[0][p] - x.cos()).abs() < 1e-12,
                "at {x}: {}",
                out.fields[0][p]
            );
        }
    }

    #[test]
    fn affine_invariance() {
        // Adding a level-independent field commutes with extrapolation.
        let h = 0.5;
        let w = weights(1).unwrap();
        let grids = grids_for(1, h, 2.0);
        let base: Vec<Trajectory> = grids
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let hj = h / (1 << j) as f64;
                synthetic_trajectory(g, move |x| x.exp() / 10.0 + hj * hj, 2)
            })
            .collect();
        let shifted: Vec<Trajectory> = grids
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let hj = h / (1 << j) as f64;
                synthetic_trajectory(g, move |x| x.exp() / 10.0 + hj * hj + x.sin(), 2)
            })
            .collect();
        let refs: Vec<&Grid> = grids.iter().collect();
        let a = extrapolate(&base, &refs, &w).unwrap();
        let b = extrapolate(&shifted, &refs, &w).unwrap();
        for p in 0..grids[0].len() {
            let x = grids[0].position(p)[0];
            assert!((b.fields[0][p] - a.fields[0][p] - x.sin()).abs() < 1e-13);
        }
    }

    #[test]
    fn nesting_violation_is_reported() {
        let w = weights(1).unwrap();
        let st = StencilSet::line(&[1]).unwrap();
        let g0 = build_grid(&st, 0.5, 2.0).unwrap();
        let g1 = build_grid(&st, 0.3, 2.0).unwrap(); // not h/2
        let t0 = synthetic_trajectory(&g0, |x| x, 1);
        let t1 = synthetic_trajectory(&g1, |x| x, 1);
        assert!(extrapolate(&[t1, t0], &[&g1, &g0], &w).is_err());
    }
}
