//! Sparse linear algebra for the implicit step: compressed sparse rows,
//! a banded LU with partial pivoting for one-dimensional grids, and a
//! restarted GMRES for the general nonsymmetric case.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` entry lists; entries are
    /// sorted by column, zeros kept as given.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// Number of stored entries in row `i`.
    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(self.col_idx[k].abs_diff(i));
            }
        }
        bw
    }
}

/// Band storage with `kl` sub- and `ku` super-diagonals plus `kl` fill
/// rows for pivoting (LAPACK general-band layout, column-major bands).
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// `(2 kl + ku + 1) x n`; entry `(i, j)` at `[j * width + kl + ku + i - j]`.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; width * n],
        }
    }

    /// Builds from CSR, widening bands symmetrically to its bandwidth.
    pub fn from_csr(a: &CsrMatrix) -> Self {
        let bw = a.bandwidth();
        let mut m = Self::zeros(a.n(), bw, bw);
        for i in 0..a.n() {
            for (j, v) in a.row(i) {
                m.add(i, j, v);
            }
        }
        m
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let width = 2 * self.kl + self.ku + 1;
        j * width + self.kl + self.ku + i - j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i + self.ku + self.kl || i > j + self.kl {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i + self.ku && i <= j + self.kl, "entry off band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku + self.kl).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.get(i, j) * x[j];
            }
            *yi = acc;
        }
    }

    /// LU factorization with partial pivoting, in place. Fails on an
    /// exactly zero pivot (singular within the band).
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.ku + self.kl; // fill widens the upper band
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let i_max = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.slot(j, j)].abs();
            for i in j + 1..=i_max {
                let v = self.data[self.slot(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            ipiv[j] = p;
            if best == 0.0 {
                return Err(Error::LinearSolve {
                    iterations: j,
                    residual: f64::INFINITY,
                });
            }
            if p != j {
                let k_hi = (j + ku_eff).min(n - 1);
                for k in j..=k_hi {
                    let (sj, sp) = (self.slot(j, k), self.slot(p, k));
                    self.data.swap(sj, sp);
                }
            }
            let pivot = self.data[self.slot(j, j)];
            for i in j + 1..=i_max {
                let s_ij = self.slot(i, j);
                let l = self.data[s_ij] / pivot;
                self.data[s_ij] = l;
                if l != 0.0 {
                    let k_hi = (j + ku_eff).min(n - 1);
                    for k in j + 1..=k_hi {
                        let s_ik = self.slot(i, k);
                        let s_jk = self.slot(j, k);
                        self.data[s_ik] -= l * self.data[s_jk];
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku_eff,
            data: self.data,
            ipiv,
        })
    }
}

/// Factorized band matrix; solves by forward/backward substitution.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku_eff: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let width = 2 * self.kl + (self.ku_eff - self.kl) + 1;
        j * width + self.ku_eff + i - j
    }

    pub fn solve_into(&self, rhs: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                rhs.swap(j, p);
            }
            let xj = rhs[j];
            if xj != 0.0 {
                let i_max = (j + self.kl).min(n - 1);
                for i in j + 1..=i_max {
                    rhs[i] -= self.data[self.slot(i, j)] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let mut acc = rhs[j];
            let k_hi = (j + self.ku_eff).min(n - 1);
            for k in j + 1..=k_hi {
                acc -= self.data[self.slot(j, k)] * rhs[k];
            }
            rhs[j] = acc / self.data[self.slot(j, j)];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_into(&mut x);
        x
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted GMRES for nonsymmetric systems. Converges when
/// `|A x - b| <= tol (1 + |b|)`; exceeding `max_iter` total iterations
/// is a nonconvergence error carrying the last residual.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<Vec<f64>> {
    let n = a.n();
    let target = tol * (1.0 + norm2(b));
    let mut x = vec![0.0; n];
    let mut total = 0usize;
    let m = restart.max(1);
    let mut residual = f64::INFINITY;
    while total < max_iter {
        let mut r = vec![0.0; n];
        a.matvec_into(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        residual = beta;
        if beta <= target {
            return Ok(x);
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            if total >= max_iter {
                break;
            }
            total += 1;
            let mut w = vec![0.0; n];
            a.matvec_into(&v[k], &mut w);
            for (j, vj) in v.iter().enumerate().take(k + 1) {
                let hjk = dot(&w, vj);
                h[j][k] = hjk;
                for (wi, vji) in w.iter_mut().zip(vj) {
                    *wi -= hjk * vji;
                }
            }
            let hnorm = norm2(&w);
            h[k + 1][k] = hnorm;
            // Apply accumulated Givens rotations to the new column.
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            residual = g[k + 1].abs();
            if residual <= target || hnorm == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnorm).collect());
        }
        // Back-substitute the least-squares solution and update x.
        if k_used > 0 {
            let mut y = vec![0.0; k_used];
            for i in (0..k_used).rev() {
                let mut acc = g[i];
                for j in i + 1..k_used {
                    acc -= h[i][j] * y[j];
                }
                y[i] = acc / h[i][i];
            }
            for (j, yj) in y.iter().enumerate() {
                for (xi, vji) in x.iter_mut().zip(&v[j]) {
                    *xi += yj * vji;
                }
            }
        }
        if residual <= target {
            // Confirm with the true residual before accepting.
            let mut r = vec![0.0; n];
            a.matvec_into(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            if norm2(&r) <= target {
                return Ok(x);
            }
        }
    }
    Err(Error::LinearSolve {
        iterations: total,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Dense Gaussian elimination with partial pivoting; the oracle the
    /// banded and Krylov paths are checked against.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for j in 0..n {
            let p = (j..n)
                .max_by(|&r, &s| m[r][j].abs().total_cmp(&m[s][j].abs()))
                .unwrap();
            m.swap(j, p);
            x.swap(j, p);
            let piv = m[j][j];
            for i in j + 1..n {
                let l = m[i][j] / piv;
                for k in j..n {
                    m[i][k] -= l * m[j][k];
                }
                x[i] -= l * x[j];
            }
        }
        for j in (0..n).rev() {
            for k in j + 1..n {
                x[j] -= m[j][k] * x[k];
            }
            x[j] /= m[j][j];
        }
        x
    }

    fn random_banded(n: usize, bw: usize, rng: &mut StdRng) -> (BandedMatrix, Vec<Vec<f64>>) {
        let mut banded = BandedMatrix::zeros(n, bw, bw);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                banded.add(i, j, v);
                dense[i][j] = v;
            }
            // Diagonal dominance keeps the oracle comparison clean.
            let boost: f64 = 3.0 + rng.gen_range(0.0..1.0);
            banded.add(i, i, boost);
            dense[i][i] += boost;
        }
        (banded, dense)
    }

    #[test]
    fn banded_lu_matches_dense_elimination() {
        let mut rng = StdRng::seed_from_u64(7);
        for &(n, bw) in &[(12usize, 1usize), (40, 2), (73, 3)] {
            let (banded, dense) = random_banded(n, bw, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lu = banded.factor().unwrap();
            let x = lu.solve(&b);
            let y = dense_solve(&dense, &b);
            for (xi, yi) in x.iter().zip(&y) {
                assert!((xi - yi).abs() <= 1e-10, "banded vs dense: {xi} vs {yi}");
            }
        }
    }

    #[test]
    fn identity_solve_is_rhs() {
        let mut m = BandedMatrix::zeros(5, 1, 1);
        for i in 0..5 {
            m.add(i, i, 1.0);
        }
        let lu = m.factor().unwrap();
        let rhs = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(lu.solve(&rhs), rhs);
    }

    #[test]
    fn singular_matrix_is_detected() {
        let m = BandedMatrix::zeros(4, 1, 1);
        assert!(matches!(m.factor(), Err(Error::LinearSolve { .. })));
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] needs a row swap.
        let mut m = BandedMatrix::zeros(2, 1, 1);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        let x = m.factor().unwrap().solve(&[2.0, 3.0]);
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn gmres_matches_dense_elimination() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 60;
        let mut rows = vec![Vec::new(); n];
        let mut dense = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                row.push((j, v));
                dense[i][j] = v;
            }
            row.push((i, 4.0));
            dense[i][i] += 4.0;
        }
        let a = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = gmres(&a, &b, 1e-12, 10 * n, 30).unwrap();
        let y = dense_solve(&dense, &b);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - yi).abs() <= 1e-9);
        }
    }

    #[test]
    fn gmres_gives_up_on_singular_systems() {
        // The zero matrix cannot reproduce a nonzero right-hand side.
        let a = CsrMatrix::from_rows(vec![vec![(0, 0.0)], vec![(1, 0.0)]]);
        let r = gmres(&a, &[1.0, 1.0], 1e-12, 20, 10);
        assert!(matches!(r, Err(Error::LinearSolve { .. })));
    }

    #[test]
    fn csr_bandwidth_and_matvec() {
        let a = CsrMatrix::from_rows(vec![
            vec![(0, 2.0), (1, -1.0)],
            vec![(0, -1.0), (1, 2.0), (2, -1.0)],
            vec![(1, -1.0), (2, 2.0)],
        ]);
        assert_eq!(a.bandwidth(), 1);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 1.0]);
    }
}
