//! Dense complex linear algebra helpers on top of nalgebra.
//!
//! Matrices here are small (cell dimension times a few ranges), so every
//! routine is a straightforward dense algorithm. The ordered Schur form and
//! the Schur-based spectral projector are the two pieces nalgebra lacks.

use nalgebra::{DMatrix, DVector, Schur as NaSchur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Thin singular value decomposition, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub values: Vec<f64>,
    /// Left singular vectors as columns.
    pub u: CMat,
    /// Right singular vectors as columns.
    pub v: CMat,
}

/// SVD with an iteration cap (the unbounded solver can stall on inputs with
/// exactly zero columns); falls back to the Hermitian eigenproblem of `M*M`.
pub fn svd(m: &CMat) -> Svd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Svd { values: Vec::new(), u: CMat::zeros(rows, 0), v: CMat::zeros(cols, 0) };
    }
    let scale = max_abs(m);
    if scale == 0.0 {
        return Svd { values: vec![0.0; k], u: CMat::identity(rows, k), v: CMat::identity(cols, k) };
    }
    // Tall and wide inputs go through a thin QR so the checked square
    // factorization below never touches more than `k x k` entries.
    if rows > cols {
        let qr = m.clone().qr();
        let inner = svd(&qr.r());
        return Svd { values: inner.values, u: qr.q() * inner.u, v: inner.v };
    }
    if rows < cols {
        let t = svd(&m.adjoint());
        return Svd { values: t.values, u: t.v, v: t.u };
    }
    // Scaling keeps tiny or huge inputs away from under/overflow.
    let scaled = m / C64::new(scale, 0.0);
    // The iterative solver has been seen to return a wrong factorization on
    // exactly rank-deficient complex input, so every result is checked.
    for eps in [5.0 * f64::EPSILON, 64.0 * f64::EPSILON] {
        if let Some(s) = scaled.clone().try_svd(true, true, eps, 200 * (k + 10)) {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| s.singular_values[b].total_cmp(&s.singular_values[a]));
            let u_raw = s.u.expect("requested");
            let vt = s.v_t.expect("requested");
            let values: Vec<f64> = order.iter().map(|&i| s.singular_values[i]).collect();
            let u = CMat::from_fn(rows, k, |i, j| u_raw[(i, order[j])]);
            let v = CMat::from_fn(cols, k, |i, j| vt[(order[j], i)].conj());
            let sigma = CMat::from_fn(k, k, |i, j| if i == j { C64::new(values[i], 0.0) } else { ZERO });
            if (&u * sigma * v.adjoint() - &scaled).norm() <= 1e-12 * (k as f64).sqrt() * values[0].max(1.0) {
                return Svd { values: values.iter().map(|x| x * scale).collect(), u, v };
            }
        }
    }
    let (ev, vecs) = hermitian_eigen(&(scaled.adjoint() * &scaled));
    let (_, left) = hermitian_eigen(&(&scaled * scaled.adjoint()));
    let smax = ev.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    let mut values = Vec::with_capacity(k);
    let mut v = CMat::zeros(cols, k);
    let mut u = CMat::zeros(rows, k);
    for j in 0..k {
        let idx = cols - 1 - j;
        let sv = ev[idx].max(0.0).sqrt();
        values.push(sv * scale);
        let col = vecs.column(idx).into_owned();
        let mu = &scaled * &col;
        let nu = mu.norm();
        if nu > 1e-8 * smax {
            u.set_column(j, &(mu / C64::new(nu, 0.0)));
        } else {
            u.set_column(j, &left.column(rows - 1 - j));
        }
        v.set_column(j, &col);
    }
    Svd { values, u, v }
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let scale = max_abs(m);
    if scale == 0.0 {
        return vec![0.0; m.nrows().min(m.ncols())];
    }
    let scaled = m / C64::new(scale, 0.0);
    let mut s: Vec<f64> = match scaled.clone().try_svd(false, false, 5.0 * f64::EPSILON, 200 * (m.nrows().min(m.ncols()) + 10)) {
        Some(s) => s.singular_values.iter().copied().collect(),
        None => return svd(m).values,
    };
    // Cheap consistency check against the Frobenius norm; see `svd`.
    let fro = scaled.norm_squared();
    if (s.iter().map(|x| x * x).sum::<f64>() - fro).abs() > 1e-10 * fro {
        return svd(m).values;
    }
    s.sort_by(|a, b| b.total_cmp(a));
    s.iter().map(|x| x * scale).collect()
}

pub fn op_norm(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn min_singular_value(m: &CMat) -> f64 {
    if m.shape() == (1, 1) {
        return m[(0, 0)].norm();
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn condition_number(m: &CMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn det(m: &CMat) -> C64 {
    if m.nrows() == 0 {
        return ONE;
    }
    m.clone().lu().determinant()
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    m.clone().lu().try_inverse()
}

pub fn solve(a: &CMat, b: &CMat) -> Option<CMat> {
    a.clone().lu().solve(b)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    // Symmetrize so roundoff in the input cannot leak into the solver.
    let h = (m + m.adjoint()) * c64(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let h = (m + m.adjoint()) * c64(0.5, 0.0);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Complex Schur form `A = Q T Q*` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct Schur {
    pub q: CMat,
    pub t: CMat,
}

impl Schur {
    pub fn new(m: &CMat) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::ShapeMismatch("Schur form of a non-square matrix".into()));
        }
        if n == 0 {
            return Ok(Self { q: CMat::zeros(0, 0), t: CMat::zeros(0, 0) });
        }
        let s = NaSchur::try_new(m.clone(), f64::EPSILON, 100 * n.max(10))
            .ok_or_else(|| Error::NonConvergent("complex Schur iteration".into()))?;
        let (q, mut t) = s.unpack();
        for j in 0..n {
            for i in j + 1..n {
                t[(i, j)] = ZERO;
            }
        }
        Ok(Self { q, t })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.t[(i, i)]).collect()
    }

    /// Swap the adjacent diagonal entries `j` and `j + 1` by a unitary rotation.
    fn swap(&mut self, j: usize) {
        let n = self.dim();
        let t11 = self.t[(j, j)];
        let t22 = self.t[(j + 1, j + 1)];
        let t12 = self.t[(j, j + 1)];
        let x0 = t12;
        let x1 = t22 - t11;
        let nx = (x0.norm_sqr() + x1.norm_sqr()).sqrt();
        if nx == 0.0 {
            return;
        }
        let a = x0 / nx;
        let b = x1 / nx;
        // G = [[a, -conj b], [b, conj a]], first column is the t22-eigenvector.
        for col in 0..n {
            let u = self.t[(j, col)];
            let v = self.t[(j + 1, col)];
            self.t[(j, col)] = a.conj() * u + b.conj() * v;
            self.t[(j + 1, col)] = -b * u + a * v;
        }
        for row in 0..n {
            let u = self.t[(row, j)];
            let v = self.t[(row, j + 1)];
            self.t[(row, j)] = u * a + v * b;
            self.t[(row, j + 1)] = -u * b.conj() + v * a.conj();
            let u = self.q[(row, j)];
            let v = self.q[(row, j + 1)];
            self.q[(row, j)] = u * a + v * b;
            self.q[(row, j + 1)] = -u * b.conj() + v * a.conj();
        }
        self.t[(j + 1, j)] = ZERO;
        self.t[(j, j)] = t22;
        self.t[(j + 1, j + 1)] = t11;
    }

    /// Move every eigenvalue satisfying `select` to the leading block, keeping
    /// the relative order inside both groups. Returns the leading block size.
    pub fn reorder<F: Fn(C64) -> bool>(&mut self, select: F) -> usize {
        let n = self.dim();
        let mut k = 0;
        for i in 0..n {
            if select(self.t[(i, i)]) {
                let mut j = i;
                while j > k {
                    self.swap(j - 1);
                    j -= 1;
                }
                k += 1;
            }
        }
        k
    }

    /// Orthonormal basis of the invariant subspace of the leading `k` eigenvalues.
    pub fn leading_basis(&self, k: usize) -> CMat {
        self.q.columns(0, k).into_owned()
    }

    /// Spectral projector onto the leading `k`-dimensional invariant subspace,
    /// along the complementary invariant subspace. Also returns the Sylvester
    /// solution `X` with `T11 X - X T22 = T12`.
    pub fn leading_projector(&self, k: usize) -> (CMat, CMat) {
        let n = self.dim();
        let m = n - k;
        let mut x = CMat::zeros(k, m);
        for j in 0..m {
            let mut rhs: CVec = self.t.view((0, k + j), (k, 1)).column(0).into_owned();
            for l in 0..j {
                let coef = self.t[(k + l, k + j)];
                for i in 0..k {
                    rhs[i] += x[(i, l)] * coef;
                }
            }
            let shift = self.t[(k + j, k + j)];
            for i in (0..k).rev() {
                let mut acc = rhs[i];
                for p in i + 1..k {
                    acc -= self.t[(i, p)] * x[(p, j)];
                }
                x[(i, j)] = acc / (self.t[(i, i)] - shift);
            }
        }
        let mut core = CMat::zeros(n, n);
        for i in 0..k {
            core[(i, i)] = ONE;
            for j in 0..m {
                core[(i, k + j)] = x[(i, j)];
            }
        }
        (&self.q * core * self.q.adjoint(), x)
    }
}

pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    Ok(Schur::new(m)?.eigenvalues())
}

/// A group of numerically coincident eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub center: C64,
    pub multiplicity: usize,
}

/// Single-linkage clustering: `a` and `b` are linked when
/// `|a - b| <= tol * max(1, |a|, |b|)`. Centers are cluster means, which stay
/// accurate even when a defective eigenvalue splits under roundoff.
pub fn cluster_eigenvalues(values: &[C64], tol: f64) -> Vec<Cluster> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let scale = 1f64.max(values[i].norm()).max(values[j].norm());
            if (values[i] - values[j]).norm() <= tol * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, C64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += values[i];
                g.2 += 1;
            }
            None => groups.push((r, values[i], 1)),
        }
    }
    let mut out: Vec<Cluster> = groups
        .into_iter()
        .map(|(_, sum, m)| Cluster { center: sum / m as f64, multiplicity: m })
        .collect();
    out.sort_by(|a, b| {
        a.center
            .norm()
            .total_cmp(&b.center.norm())
            .then(a.center.arg().total_cmp(&b.center.arg()))
    });
    out
}

/// Orthonormal basis for the column space (thin QR, full column rank assumed).
pub fn orthonormalize(m: &CMat) -> CMat {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q()
}

/// Columns selected by index.
pub fn select_columns(m: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_rows(m: &CMat, rows: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn submatrix(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Block-diagonal direct sum.
pub fn direct_sum(blocks: &[&CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Integer power of a nonzero complex number (negative exponents allowed).
pub fn cpowi(z: C64, k: i64) -> C64 {
    if k >= 0 {
        z.powu(k as u32)
    } else {
        z.inv().powu((-k) as u32)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(items: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in items {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        CMat::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            c64(a, b)
        })
    }

    #[test]
    fn schur_reorder_keeps_similarity() {
        let a = sample(7, 3);
        let mut s = Schur::new(&a).unwrap();
        let k = s.reorder(|z| z.norm() < 0.5);
        let recon = &s.q * &s.t * s.q.adjoint();
        assert!((recon - &a).norm() < 1e-12);
        for j in 0..7 {
            for i in j + 1..7 {
                assert_eq!(s.t[(i, j)], ZERO);
            }
        }
        for i in 0..7 {
            assert_eq!(s.t[(i, i)].norm() < 0.5, i < k);
        }
        // Leading columns span an invariant subspace.
        let u = s.leading_basis(k);
        let au = &a * &u;
        let resid = &au - &u * (u.adjoint() * &au);
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent_and_commutes() {
        let a = sample(6, 11);
        let mut s = Schur::new(&a).unwrap();
        let k = s.reorder(|z| z.re > 0.0);
        let (p, _) = s.leading_projector(k);
        assert!((&p * &p - &p).norm() < 1e-10);
        assert!((&p * &a - &a * &p).norm() < 1e-10);
        assert!((p.trace().re - k as f64).abs() < 1e-10);
    }

    #[test]
    fn clusters_merge_split_defective_pair() {
        let vals = [c64(-0.5 + 2e-8, 0.0), c64(-0.5 - 2e-8, 0.0), c64(2.0, 0.0)];
        let cl = cluster_eigenvalues(&vals, 1e-7);
        assert_eq!(cl.len(), 2);
        assert_eq!(cl[0].multiplicity, 2);
        assert!((cl[0].center - c64(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
