//! Stencil sets and the lattices they generate.
//!
//! A stencil set holds finitely many integer vectors including the zero
//! vector. The nonzero part generates a sublattice of `Z^d`; scaling by
//! the mesh size `h` and intersecting with a ball gives the computational
//! grid. Restricting stencil vectors to integer coordinates makes any
//! real-linear dependence automatically rational, keeps grid membership
//! exact, and makes the grids for `h` and `h/2` nested by construction:
//! the point with integer coordinates `v` at mesh `h` is the point `2v`
//! at mesh `h/2`.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Relative slack applied to ball-membership tests so that lattice points
/// landing exactly on the boundary radius are kept despite rounding in
/// `h * k`.
pub const BALL_TOL: f64 = 1e-12;

/// True iff a point with squared norm `norm2` (already scaled by `h^2`)
/// lies in the closed ball of the given radius, up to [`BALL_TOL`].
pub fn ball_contains(norm2: f64, radius: f64) -> bool {
    norm2 <= radius * radius * (1.0 + BALL_TOL)
}

/// A finite set of integer stencil vectors containing the zero vector.
///
/// Vector 0 is always the zero vector; the remainder (the nonzero part)
/// is sorted lexicographically and must be nonempty and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StencilSet {
    dim: usize,
    vectors: Vec<Vec<i64>>,
}

impl StencilSet {
    /// Builds a stencil set from its nonzero vectors; the zero vector is
    /// inserted automatically at index 0.
    pub fn new(dim: usize, offsets: Vec<Vec<i64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidStencil("dimension must be positive".into()));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidStencil(
                "the nonzero part of the stencil must not be empty".into(),
            ));
        }
        let mut sorted = offsets;
        for v in &sorted {
            if v.len() != dim {
                return Err(Error::InvalidStencil(format!(
                    "vector {v:?} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().all(|&c| c == 0) {
                return Err(Error::InvalidStencil(
                    "the zero vector may not appear among the nonzero offsets".into(),
                ));
            }
        }
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidStencil("duplicate stencil vectors".into()));
        }
        let mut vectors = Vec::with_capacity(sorted.len() + 1);
        vectors.push(vec![0; dim]);
        vectors.extend(sorted);
        Ok(Self { dim, vectors })
    }

    /// 1D convenience: nonzero offsets given as plain integers.
    pub fn line(offsets: &[i64]) -> Result<Self> {
        Self::new(1, offsets.iter().map(|&k| vec![k]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All vectors, zero vector first.
    pub fn vectors(&self) -> &[Vec<i64>] {
        &self.vectors
    }

    /// Number of vectors including zero.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the zero vector.
    pub fn zero_index(&self) -> usize {
        0
    }

    /// The nonzero vectors.
    pub fn nonzero(&self) -> &[Vec<i64>] {
        &self.vectors[1..]
    }

    /// Largest Euclidean norm over the stencil vectors.
    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| (v.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Basis of the sublattice of `Z^d` generated by the given integer
/// vectors, via column reduction (Euclidean elimination row by row).
/// The basis is in echelon form; its length is the lattice rank.
fn lattice_basis(dim: usize, generators: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let mut cols: Vec<Vec<i64>> = generators
        .iter()
        .flat_map(|v| [v.clone(), v.iter().map(|&c| -c).collect()])
        .collect();
    // Including -v alongside v changes nothing about the span but keeps
    // the reduction symmetric for single-generator inputs.
    cols.retain(|c| c.iter().any(|&x| x != 0));
    let mut basis = Vec::new();
    for row in 0..dim {
        loop {
            let mut nz: Vec<usize> = (0..cols.len()).filter(|&i| cols[i][row] != 0).collect();
            if nz.len() <= 1 {
                break;
            }
            nz.sort_by_key(|&i| cols[i][row].abs());
            let (small, large) = (nz[0], nz[1]);
            let q = cols[large][row] / cols[small][row];
            for r in 0..dim {
                cols[large][r] -= q * cols[small][r];
            }
            cols.retain(|c| c.iter().any(|&x| x != 0));
        }
        if let Some(i) = (0..cols.len()).find(|&i| cols[i][row] != 0) {
            basis.push(cols.swap_remove(i));
        }
    }
    basis
}

/// Enumerates all integer combinations `z` of the basis with
/// `|B z|^2 <= bound` using Fincke-Pohst interval recursion on the Gram
/// matrix, then filters with the exact integer-norm predicate.
fn enumerate_lattice_ball(basis: &[Vec<i64>], dim: usize, bound: f64) -> Vec<Vec<i64>> {
    let rank = basis.len();
    if rank == 0 {
        return vec![vec![0; dim]];
    }
    // Gram matrix (exact in f64 for small integer entries).
    let mut g = vec![vec![0.0; rank]; rank];
    for i in 0..rank {
        for j in 0..rank {
            g[i][j] = (0..dim).map(|r| (basis[i][r] * basis[j][r]) as f64).sum();
        }
    }
    // LDL^T with unit lower-triangular l and positive diagonal d.
    let mut l = vec![vec![0.0; rank]; rank];
    let mut d = vec![0.0; rank];
    for j in 0..rank {
        let mut dj = g[j][j];
        for k in 0..j {
            dj -= l[j][k] * l[j][k] * d[k];
        }
        d[j] = dj;
        for i in j + 1..rank {
            let mut v = g[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k] * d[k];
            }
            l[i][j] = v / dj;
        }
    }
    let slack = bound * 1e-9 + 1e-9;
    let mut out = Vec::new();
    let mut z = vec![0i64; rank];
    // Recurse from the last coordinate down; `remaining` is the budget
    // left for coordinates 0..=level.
    fn descend(
        level: usize,
        remaining: f64,
        z: &mut [i64],
        l: &[Vec<f64>],
        d: &[f64],
        basis: &[Vec<i64>],
        dim: usize,
        bound: f64,
        out: &mut Vec<Vec<i64>>,
    ) {
        let center: f64 = (level + 1..z.len())
            .map(|i| l[i][level] * z[i] as f64)
            .sum();
        let half_width = (remaining.max(0.0) / d[level]).sqrt();
        let lo = (-center - half_width).ceil() as i64;
        let hi = (-center + half_width).floor() as i64;
        for zi in lo..=hi {
            z[level] = zi;
            let term = d[level] * (zi as f64 + center) * (zi as f64 + center);
            if level == 0 {
                let mut point = vec![0i64; dim];
                for (zk, b) in z.iter().zip(basis.iter()) {
                    for r in 0..dim {
                        point[r] += zk * b[r];
                    }
                }
                let norm2: f64 = point.iter().map(|&c| (c * c) as f64).sum();
                if norm2 <= bound {
                    out.push(point);
                }
            } else {
                descend(level - 1, remaining - term, z, l, d, basis, dim, bound, out);
            }
        }
    }
    descend(
        rank - 1,
        bound + slack,
        &mut z,
        &l,
        &d,
        basis,
        dim,
        bound,
        &mut out,
    );
    out
}

/// The lattice generated by `h * Lambda_1`, intersected with a ball.
///
/// Points are stored as integer coordinate tuples (the lattice element
/// before scaling by `h`), sorted lexicographically, with an index map
/// back from coordinates to ordinals. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Grid {
    stencil: StencilSet,
    h: f64,
    box_radius: f64,
    points: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
}

/// Enumerates all points of the subgroup generated by the scaled stencil
/// whose Euclidean norm is at most `box_radius` (boundary included up to
/// [`BALL_TOL`]), sorted lexicographically by integer coordinates.
pub fn build_grid(stencil: &StencilSet, h: f64, box_radius: f64) -> Result<Grid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!(
            "mesh size h must be positive, got {h}"
        )));
    }
    if !(box_radius > 0.0) || !box_radius.is_finite() {
        return Err(Error::Domain(format!(
            "box radius must be positive, got {box_radius}"
        )));
    }
    if box_radius < h * stencil.max_norm() {
        return Err(Error::Domain(format!(
            "box radius {box_radius} smaller than h * max stencil norm {}",
            h * stencil.max_norm()
        )));
    }
    let basis = lattice_basis(stencil.dim(), stencil.nonzero());
    // Membership test in integer coordinates: |h v|^2 <= R^2 (1 + tol).
    let bound = box_radius * box_radius * (1.0 + BALL_TOL) / (h * h);
    let mut points = enumerate_lattice_ball(&basis, stencil.dim(), bound);
    points.sort();
    let index = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();
    Ok(Grid {
        stencil: stencil.clone(),
        h,
        box_radius,
        points,
        index,
    })
}

impl Grid {
    pub fn stencil(&self) -> &StencilSet {
        &self.stencil
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn box_radius(&self) -> f64 {
        self.box_radius
    }

    pub fn dim(&self) -> usize {
        self.stencil.dim()
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integer coordinates of point `i`.
    pub fn coords(&self, i: usize) -> &[i64] {
        &self.points[i]
    }

    /// Physical position `h * coords` of point `i`.
    pub fn position(&self, i: usize) -> Vec<f64> {
        self.points[i].iter().map(|&c| c as f64 * self.h).collect()
    }

    /// Writes the physical position of point `i` into `buf`.
    pub fn position_into(&self, i: usize, buf: &mut [f64]) {
        for (b, &c) in buf.iter_mut().zip(self.points[i].iter()) {
            *b = c as f64 * self.h;
        }
    }

    /// Squared Euclidean norm of the physical position of point `i`.
    pub fn norm2(&self, i: usize) -> f64 {
        let n2: f64 = self.points[i].iter().map(|&c| (c * c) as f64).sum();
        n2 * self.h * self.h
    }

    /// Ordinal of the point with the given integer coordinates.
    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        self.index.get(coords).copied()
    }

    /// Stencil-addressed neighbor lookup: the ordinal of the point at
    /// `x + sign * h * offset`, or `None` when that point lies outside
    /// the stored grid (fields are extended by zero there).
    ///
    /// A zero offset returns the point itself.
    pub fn neighbor(&self, i: usize, offset: &[i64], sign: i64) -> Option<usize> {
        if offset.iter().all(|&c| c == 0) {
            return Some(i);
        }
        let mut key: Vec<i64> = self.points[i].clone();
        for (k, &o) in key.iter_mut().zip(offset.iter()) {
            *k += sign * o;
        }
        self.index.get(&key).copied()
    }

    /// Ordinals of all points inside the closed ball of `radius`
    /// (boundary included up to [`BALL_TOL`]).
    pub fn points_in_ball(&self, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| ball_contains(self.norm2(i), radius))
            .collect()
    }
}

/// Moves a field from one grid onto another whose points are a subset.
///
/// The target mesh must be `2^i` times the source mesh for some `i >= 0`
/// (same stencil); boxes may differ. Values are copied point-identically,
/// no interpolation. Missing points are a nesting violation.
pub fn transfer(field: &[f64], from: &Grid, to: &Grid) -> Result<Vec<f64>> {
    if field.len() != from.len() {
        return Err(Error::ShapeMismatch(format!(
            "field length {} does not match source grid size {}",
            field.len(),
            from.len()
        )));
    }
    if from.stencil() != to.stencil() {
        return Err(Error::ShapeMismatch("grids have different stencils".into()));
    }
    let ratio = to.h() / from.h();
    let level = ratio.log2().round();
    if level < 0.0 || (ratio - level.exp2()).abs() > 1e-12 * ratio {
        return Err(Error::ShapeMismatch(format!(
            "target mesh {} is not a power-of-two multiple of source mesh {}",
            to.h(),
            from.h()
        )));
    }
    let scale = 1i64 << level as u32;
    let mut out = vec![0.0; to.len()];
    let mut key = vec![0i64; from.dim()];
    for (i, value) in out.iter_mut().enumerate() {
        for (k, &c) in key.iter_mut().zip(to.coords(i).iter()) {
            *k = c * scale;
        }
        match from.index_of(&key) {
            Some(j) => *value = field[j],
            None => {
                return Err(Error::NestingViolation {
                    point: to.coords(i).to_vec(),
                })
            }
        }
    }
    Ok(out)
}

/// Restriction from a fine grid to a coarse grid over the same box:
/// the coarse value at each point is the fine value at the identical
/// point. Exact, no interpolation.
pub fn restrict(field: &[f64], fine: &Grid, coarse: &Grid) -> Result<Vec<f64>> {
    if (fine.box_radius() - coarse.box_radius()).abs() > 1e-12 * coarse.box_radius() {
        return Err(Error::ShapeMismatch(
            "restriction requires fine and coarse grids over the same box".into(),
        ));
    }
    if coarse.h() < fine.h() {
        return Err(Error::ShapeMismatch(
            "restriction target must be the coarser grid".into(),
        ));
    }
    transfer(field, fine, coarse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn positions_1d(grid: &Grid) -> Vec<f64> {
        (0..grid.len()).map(|i| grid.position(i)[0]).collect()
    }

    #[test]
    fn one_dimensional_halves() {
        let st = StencilSet::line(&[1]).unwrap();
        let grid = build_grid(&st, 0.5, 1.0).unwrap();
        assert_eq!(positions_1d(&grid), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn two_dimensional_unit_ball() {
        let st = StencilSet::new(2, vec![vec![1, 0], vec![0, 1]]).unwrap();
        let grid = build_grid(&st, 1.0, 1.0).unwrap();
        let pts: Vec<&[i64]> = (0..grid.len()).map(|i| grid.coords(i)).collect();
        assert_eq!(pts, vec![&[-1, 0][..], &[0, -1], &[0, 0], &[0, 1], &[1, 0]]);
    }

    #[test]
    fn worked_example_scale_count() {
        // R = 10 run of the worked example: support radius 3 + R = 13.
        let st = StencilSet::line(&[1]).unwrap();
        let grid = build_grid(&st, 0.1, 13.0).unwrap();
        assert_eq!(grid.len(), 261);
    }

    #[test]
    fn coprime_generators_span_all_integers() {
        // gcd(3, 5) = 1, so the generated lattice is all of Z even though
        // no single generator reaches the points near the origin.
        let st = StencilSet::line(&[3, 5]).unwrap();
        let grid = build_grid(&st, 1.0, 6.0).unwrap();
        assert_eq!(
            positions_1d(&grid),
            (-6..=6).map(|k| k as f64).collect::<Vec<_>>()
        );
    }

    #[test]
    fn diagonal_sublattice_stays_on_the_line() {
        let st = StencilSet::new(2, vec![vec![1, 1]]).unwrap();
        let grid = build_grid(&st, 1.0, 3.0).unwrap();
        for i in 0..grid.len() {
            let c = grid.coords(i);
            assert_eq!(c[0], c[1]);
        }
        assert_eq!(grid.len(), 5); // k (1,1) for |k| sqrt(2) <= 3: k = -2..=2
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(StencilSet::line(&[]).is_err());
        assert!(StencilSet::new(1, vec![vec![0]]).is_err());
        assert!(StencilSet::new(1, vec![vec![1], vec![1]]).is_err());
        let st = StencilSet::line(&[1]).unwrap();
        assert!(build_grid(&st, 0.0, 1.0).is_err());
        assert!(build_grid(&st, -0.5, 1.0).is_err());
        assert!(build_grid(&st, 1.0, 0.5).is_err()); // box smaller than h * max norm
    }

    #[test]
    fn determinism() {
        let st = StencilSet::new(2, vec![vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let a = build_grid(&st, 0.25, 2.0).unwrap();
        let b = build_grid(&st, 0.25, 2.0).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn neighbor_addressing() {
        let st = StencilSet::line(&[1]).unwrap();
        let grid = build_grid(&st, 0.5, 1.0).unwrap();
        let center = grid.index_of(&[0]).unwrap();
        let right = grid.neighbor(center, &[1], 1).unwrap();
        assert_eq!(grid.position(right), vec![0.5]);
        // Boundary point plus outward offset leaves the grid.
        let edge = grid.index_of(&[2]).unwrap();
        assert_eq!(grid.neighbor(edge, &[1], 1), None);
        // Zero offset addresses the point itself.
        assert_eq!(grid.neighbor(center, &[0], 1), Some(center));
    }

    #[test]
    fn restriction_samples_pointwise() {
        let st = StencilSet::line(&[1]).unwrap();
        let coarse = build_grid(&st, 0.5, 2.0).unwrap();
        let fine = build_grid(&st, 0.25, 2.0).unwrap();
        // x^2 sampled on the fine grid restricts to x^2 on the coarse grid.
        let f: Vec<f64> = (0..fine.len())
            .map(|i| fine.position(i)[0].powi(2))
            .collect();
        let r = restrict(&f, &fine, &coarse).unwrap();
        for i in 0..coarse.len() {
            assert_eq!(r[i], coarse.position(i)[0].powi(2));
        }
        // Restriction to the same grid is the identity.
        let same = restrict(&f, &fine, &fine).unwrap();
        assert_eq!(same, f);
        // Constant fields stay constant.
        let ones = vec![1.0; fine.len()];
        assert!(restrict(&ones, &fine, &coarse)
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn restrict_after_inject_is_identity() {
        let st = StencilSet::line(&[1]).unwrap();
        let coarse = build_grid(&st, 0.5, 2.0).unwrap();
        let fine = build_grid(&st, 0.25, 2.0).unwrap();
        let cf: Vec<f64> = (0..coarse.len()).map(|i| (i as f64).sin()).collect();
        // Inject: place coarse values at their fine positions, zero-fill.
        let mut injected = vec![0.0; fine.len()];
        for i in 0..coarse.len() {
            let key: Vec<i64> = coarse.coords(i).iter().map(|&c| c * 2).collect();
            injected[fine.index_of(&key).unwrap()] = cf[i];
        }
        assert_eq!(restrict(&injected, &fine, &coarse).unwrap(), cf);
    }

    #[test]
    fn transfer_detects_missing_points() {
        let st = StencilSet::line(&[1]).unwrap();
        let small = build_grid(&st, 0.5, 1.0).unwrap();
        let large = build_grid(&st, 0.5, 2.0).unwrap();
        let f = vec![1.0; small.len()];
        assert!(matches!(
            transfer(&f, &small, &large),
            Err(Error::NestingViolation { .. })
        ));
        // The other way around works: same h, subset box.
        let g = vec![2.0; large.len()];
        let t = transfer(&g, &large, &small).unwrap();
        assert_eq!(t, vec![2.0; small.len()]);
    }

    proptest! {
        #[test]
        fn nesting_across_refinement(
            offsets in proptest::collection::btree_set(1i64..5, 1..3),
            h in 0.05f64..0.7,
            radius in 1.0f64..4.0,
        ) {
            let st = StencilSet::line(&offsets.iter().copied().collect::<Vec<_>>()).unwrap();
            prop_assume!(radius >= h * st.max_norm());
            let coarse = build_grid(&st, h, radius).unwrap();
            let fine = build_grid(&st, h / 2.0, radius).unwrap();
            for i in 0..coarse.len() {
                let key: Vec<i64> = coarse.coords(i).iter().map(|&c| c * 2).collect();
                prop_assert!(fine.index_of(&key).is_some());
            }
        }

        #[test]
        fn enumeration_matches_brute_force_1d(
            step in 1i64..4,
            h in 0.1f64..0.9,
            radius in 1.0f64..5.0,
        ) {
            let st = StencilSet::line(&[step]).unwrap();
            prop_assume!(radius >= h * step as f64);
            let grid = build_grid(&st, h, radius).unwrap();
            let brute: Vec<i64> = (-1000..=1000i64)
                .filter(|k| k % step == 0)
                .filter(|k| ball_contains(((k * k) as f64) * h * h, radius))
                .collect();
            let got: Vec<i64> = (0..grid.len()).map(|i| grid.coords(i)[0]).collect();
            prop_assert_eq!(got, brute);
        }
    }
}
