//! Banded complex matrices and a few of their smallest singular triplets.
//!
//! Large truncations of block Toeplitz operators are far too big for a dense
//! SVD. A banded Cholesky factor of the shifted normal equations drives an
//! inverse subspace iteration that picks out the smallest singular values.

use crate::linalg::{orthonormalize, svd, CMat, CVec, C64, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    /// Number of subdiagonals.
    pub kl: usize,
    /// Number of superdiagonals.
    pub ku: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![ZERO; n * (kl + ku + 1)] }
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || i >= self.n || j >= self.n {
            return None;
        }
        Some(i * self.width() + (j + self.kl - i))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.slot(i, j).map_or(ZERO, |s| self.data[s])
    }

    pub fn set(&mut self, i: usize, j: usize, z: C64) {
        let s = self.slot(i, j).expect("entry outside the band");
        self.data[s] = z;
    }

    /// Columns `j` with a possibly nonzero entry in row `i`.
    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    /// Block Toeplitz matrix with `cells x cells` blocks: block `(a, a + j)`
    /// is `blocks[j + lo]` for offsets `j = -lo ..= blocks.len() - 1 - lo`.
    pub fn block_toeplitz(blocks: &[CMat], lo: usize, cells: usize) -> Self {
        let m = blocks[0].nrows();
        let hi = blocks.len() - 1 - lo;
        let kl = (lo + 1) * m - 1;
        let ku = (hi + 1) * m - 1;
        let mut out = Self::zeros(cells * m, kl, ku);
        for a in 0..cells {
            for (idx, blk) in blocks.iter().enumerate() {
                let b = a as i64 + idx as i64 - lo as i64;
                if b < 0 || b >= cells as i64 {
                    continue;
                }
                let b = b as usize;
                for i in 0..m {
                    for j in 0..m {
                        out.set(a * m + i, b * m + j, blk[(i, j)]);
                    }
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            for j in self.row_range(i) {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in self.row_range(i) {
                out[(i, j)] = self.get(i, j);
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &CVec) -> CVec {
        CVec::from_fn(self.n, |i, _| self.row_range(i).map(|j| self.get(i, j) * x[j]).sum())
    }

    pub fn mul_mat(&self, x: &CMat) -> CMat {
        let mut out = CMat::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let y = self.mul_vec(&x.column(c).into_owned());
            out.set_column(c, &y);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest singular value by power iteration on `T*T`.
    pub fn norm_estimate(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let adj = self.adjoint();
        let mut x = CVec::from_fn(self.n, |i, _| C64::from_polar(1.0, 0.7 * i as f64));
        x /= C64::new(x.norm(), 0.0);
        let mut est = 0.0;
        for _ in 0..60 {
            let y = adj.mul_vec(&self.mul_vec(&x));
            let ny = y.norm();
            if ny == 0.0 {
                return 0.0;
            }
            let next = ny.sqrt();
            x = y / C64::new(ny, 0.0);
            if (next - est).abs() <= 1e-6 * next {
                est = next;
                break;
            }
            est = next;
        }
        est
    }
}

/// Cholesky factor `L` of a banded Hermitian positive definite matrix,
/// stored by rows with `b` subdiagonals.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    rows: Vec<C64>,
}

impl BandCholesky {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.b + 1) + (j + self.b - i)
    }

    /// Factor `T*T + mu^2 I`.
    pub fn normal_equations(t: &BandMatrix, mu: f64) -> Option<Self> {
        let n = t.n;
        let b = t.kl + t.ku;
        let mut f = Self { n, b, rows: vec![ZERO; n * (b + 1)] };
        // Lower triangle of T*T: sum over rows k of conj(T_ki) T_kj.
        for k in 0..n {
            let range = t.row_range(k);
            for i in range.clone() {
                let tki = t.get(k, i).conj();
                for j in range.start..=i {
                    let at = f.idx(i, j);
                    f.rows[at] += tki * t.get(k, j);
                }
            }
        }
        for i in 0..n {
            let at = f.idx(i, i);
            f.rows[at] += C64::new(mu * mu, 0.0);
        }
        for j in 0..n {
            let mut d = f.rows[f.idx(j, j)].re;
            for k in j.saturating_sub(b)..j {
                d -= f.rows[f.idx(j, k)].norm_sqr();
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            let at = f.idx(j, j);
            f.rows[at] = C64::new(d, 0.0);
            for i in j + 1..(j + b + 1).min(n) {
                let mut acc = f.rows[f.idx(i, j)];
                for k in i.saturating_sub(b)..j {
                    acc -= f.rows[f.idx(i, k)] * f.rows[f.idx(j, k)].conj();
                }
                let at = f.idx(i, j);
                f.rows[at] = acc / d;
            }
        }
        Some(f)
    }

    /// Solve `L L* x = y`.
    pub fn solve(&self, y: &CVec) -> CVec {
        let n = self.n;
        let mut x = y.clone();
        for i in 0..n {
            let mut acc = x[i];
            for k in i.saturating_sub(self.b)..i {
                acc -= self.rows[self.idx(i, k)] * x[k];
            }
            x[i] = acc / self.rows[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..(i + self.b + 1).min(n) {
                acc -= self.rows[self.idx(k, i)].conj() * x[k];
            }
            x[i] = acc / self.rows[self.idx(i, i)];
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct SmallSingular {
    /// Ascending.
    pub values: Vec<f64>,
    /// Matching right singular vectors as columns.
    pub vectors: CMat,
    pub iterations: usize,
}

/// The `count` smallest singular values of `T` with right singular vectors,
/// by subspace iteration with `(T*T + mu^2)^{-1}` and a Rayleigh-Ritz step on
/// `T X`. The shift `mu = 1e-3 ||T||` keeps each step well conditioned while
/// still separating near-null directions from the rest by a large factor.
pub fn smallest_singular(t: &BandMatrix, count: usize, sigma_max: f64) -> SmallSingular {
    let n = t.n;
    let s = count.min(n);
    let mut mu = 1e-3 * sigma_max.max(f64::MIN_POSITIVE);
    let chol = loop {
        if let Some(c) = BandCholesky::normal_equations(t, mu) {
            break c;
        }
        mu *= 10.0;
    };
    let mut x = CMat::from_fn(n, s, |i, j| {
        // Deterministic, well spread start block.
        let phase = 0.37 * (i as f64 + 1.0) * (j as f64 + 1.0) + 0.11 * (i * i) as f64;
        C64::from_polar(1.0, phase)
    });
    x = orthonormalize(&x);
    let mut prev: Vec<f64> = vec![f64::INFINITY; s];
    let mut values = Vec::new();
    let mut vectors = x.clone();
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let mut z = CMat::zeros(n, s);
        for c in 0..s {
            z.set_column(c, &chol.solve(&x.column(c).into_owned()));
        }
        x = orthonormalize(&z);
        let dec = svd(&t.mul_mat(&x));
        values = dec.values.iter().rev().copied().collect();
        let w = CMat::from_fn(s, s, |i, j| dec.v[(i, s - 1 - j)]);
        vectors = &x * w;
        x = vectors.clone();
        let settled = values.iter().zip(&prev).all(|(v, p)| (v - p).abs() <= 1e-12 * sigma_max + 1e-9 * v);
        prev = values.clone();
        if it >= 3 && settled {
            break;
        }
    }
    SmallSingular { values, vectors, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, singular_values};

    fn sample_blocks(m: usize, count: usize, seed: u64) -> Vec<CMat> {
        let mut s = seed;
        (0..count)
            .map(|_| {
                CMat::from_fn(m, m, |_, _| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                    c64(a, b)
                })
            })
            .collect()
    }

    #[test]
    fn block_toeplitz_layout() {
        let blocks = sample_blocks(2, 3, 1);
        let t = BandMatrix::block_toeplitz(&blocks, 1, 4).to_dense();
        for a in 0..4usize {
            for b in 0..4usize {
                let off = b as i64 - a as i64;
                let blk = t.view((2 * a, 2 * b), (2, 2)).into_owned();
                if off.abs() <= 1 {
                    assert_eq!(blk, blocks[(off + 1) as usize]);
                } else {
                    assert!(blk.iter().all(|z| *z == ZERO));
                }
            }
        }
    }

    #[test]
    fn smallest_values_match_dense() {
        let blocks = sample_blocks(2, 5, 9);
        let t = BandMatrix::block_toeplitz(&blocks, 2, 30);
        let dense = singular_values(&t.to_dense());
        let small = smallest_singular(&t, 6, t.norm_estimate());
        for (k, v) in small.values.iter().enumerate() {
            let want = dense[dense.len() - 1 - k];
            assert!((v - want).abs() < 1e-8 * (1.0 + want), "{k}: {v} vs {want}");
        }
        let resid = t.mul_mat(&small.vectors.columns(0, 1).into_owned()).norm();
        assert!((resid - small.values[0]).abs() < 1e-8);
        let est = t.norm_estimate();
        assert!((est - dense[0]).abs() < 1e-3 * dense[0]);
    }

    #[test]
    fn exact_kernel_of_shift() {
        // Shift operator: (T x)_i = x_{i+1}; kernel is e_0.
        let blocks = vec![CMat::zeros(1, 1), CMat::from_element(1, 1, c64(1.0, 0.0))];
        let t = BandMatrix::block_toeplitz(&blocks, 0, 50);
        let small = smallest_singular(&t, 3, 1.0);
        assert!(small.values[0] < 1e-12);
        assert!((small.vectors[(0, 0)].norm() - 1.0).abs() < 1e-12);
        assert!((small.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_is_conjugate_transpose() {
        let blocks = sample_blocks(2, 4, 5);
        let t = BandMatrix::block_toeplitz(&blocks, 1, 6);
        assert_eq!(t.adjoint().to_dense(), t.to_dense().adjoint());
    }
}
