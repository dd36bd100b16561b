//! Half-space Hamiltonian with the Dirichlet cut, edge-mode spaces by two
//! independent routes, the edge index and an in-gap spectrum scan.
//!
//! Finite truncations keep cells `1..=N`. Hops arriving from cells `n <= 0`
//! are dropped; the far end is cut the same way, which creates a spurious
//! right edge. Only states localized at the left edge count.

use serde::Serialize;

use crate::banded::{smallest_singular, BandMatrix};
use crate::companion::{build_companion, split_matrix, CompanionSplit};
use crate::error::{Error, Result};
use crate::linalg::{
    det, hermitian_eigen, select_columns, select_rows, submatrix, svd, CMat, CVec, C64, ZERO,
};
use crate::model::{ChiralModel, ModelParams};
use crate::spectrum::{certify_gap, require_chiral_gap};
use crate::tol::{Tolerances, DEFAULT_NUM_K};
use crate::winding::{interpolate_on_circle, polynomial_roots};

/// Largest truncation solved with a dense SVD.
pub const DENSE_LIMIT: usize = 192;
/// Cap on automatic refinement of the truncation.
pub const MAX_CELLS: usize = 1 << 15;
/// A decreasing solution counts as Dirichlet when its restriction to the
/// first `R` cells is below this (the basis is orthonormal).
pub const DIRICHLET_CUT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedHamiltonian {
    pub cells: usize,
    pub matrix: CMat,
    pub model_ref: ModelParams,
}

pub fn truncate_halfspace(model: &ModelParams, cells: usize) -> Result<TruncatedHamiltonian> {
    let r_max = model.range;
    if cells < 4 * r_max {
        return Err(Error::TooFewCells { cells, min: 4 * r_max });
    }
    let d = model.dim_v;
    let mut h = CMat::zeros(cells * d, cells * d);
    for n in 0..cells {
        h.view_mut((n * d, n * d), (d, d)).copy_from(&model.on_site);
        for r in 1..=r_max {
            if n + r < cells {
                h.view_mut((n * d, (n + r) * d), (d, d)).copy_from(&model.right_hops[r - 1]);
                h.view_mut(((n + r) * d, n * d), (d, d)).copy_from(&model.left_hops[r - 1]);
            }
        }
    }
    Ok(TruncatedHamiltonian { cells, matrix: h, model_ref: model.clone() })
}

/// Truncated `H_{+-}`: block `(n, n + j)` is the coefficient of `lambda^j`
/// in `h_{+-}`.
pub fn truncated_pm(cm: &ChiralModel, cells: usize) -> BandMatrix {
    BandMatrix::block_toeplitz(&cm.h_pm_coefficients(), cm.range(), cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMethod {
    Companion,
    Truncated,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeReport {
    pub dim_ker_pm: usize,
    pub dim_ker_mp: usize,
    pub edge_index: i64,
    pub method: EdgeMethod,
    /// Smallest singular values of the truncated `H_{+-}` (truncated route)
    /// or of the Dirichlet projections (companion route), ascending.
    pub singular_values_near_zero: Vec<f64>,
    pub truncation_cells: usize,
    /// Decay lengths (in cells) of the left kernel vectors, `+-` first.
    pub localization_lengths: Vec<f64>,
    /// `dim D_{down,+}` and `dim D_{down,-}` (companion route only).
    pub decreasing_dims: Option<(usize, usize)>,
    /// Largest modulus of a decreasing companion eigenvalue.
    pub decay_ratio: Option<f64>,
    #[serde(skip)]
    pub kernel_pm: CMat,
    #[serde(skip)]
    pub kernel_mp: CMat,
}

/// `sum_i |psi_{n,i}|^2` per cell.
pub fn cell_weights(v: &CVec, block: usize) -> Vec<f64> {
    v.as_slice().chunks(block).map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect()
}

/// Decay length from a least-squares fit of `log |psi_n|` against `n`, using
/// cells within `1e-12` of the peak. Infinite when the profile does not decay.
pub fn localization_length(weights: &[f64]) -> f64 {
    let peak = weights.iter().copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > peak * 1e-24 && w > 0.0)
        .map(|(i, &w)| (i as f64, 0.5 * w.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if slope < 0.0 {
        -1.0 / slope
    } else {
        f64::INFINITY
    }
}

/// Split an orthonormal basis of near-null vectors into its left-localized
/// part: eigenvectors of the compressed left-half projector with eigenvalue
/// above one half.
fn left_part(k: &CMat, cells: usize, block: usize) -> CMat {
    if k.ncols() == 0 {
        return k.clone();
    }
    let half = (cells / 2) * block;
    let top = k.rows(0, half).into_owned();
    let (vals, vecs) = hermitian_eigen(&(top.adjoint() * &top));
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.5).collect();
    k * select_columns(&vecs, &keep)
}

#[derive(Debug, Clone)]
struct NearNull {
    values: Vec<f64>,
    kernel: CMat,
}

fn near_null(t: &BandMatrix, probe: usize, tol: &Tolerances) -> Result<NearNull> {
    let n = t.n;
    let cells_hint = n;
    let (values, vectors, sigma_max) = if n <= DENSE_LIMIT {
        let dec = svd(&t.to_dense());
        let smax = dec.values.first().copied().unwrap_or(0.0);
        let vals: Vec<f64> = dec.values.iter().rev().copied().collect();
        let vecs = CMat::from_fn(n, n, |i, j| dec.v[(i, n - 1 - j)]);
        (vals, vecs, smax)
    } else {
        let smax = t.norm_estimate();
        let mut s = probe;
        loop {
            let small = smallest_singular(t, s, smax);
            let thr = tol.kernel * smax;
            let all_small = small.values.last().is_some_and(|&v| v < 10.0 * thr);
            if !all_small || s >= n {
                break (small.values, small.vectors, smax);
            }
            s = (2 * s).min(n);
        }
    };
    let thr = tol.kernel * sigma_max;
    if let Some(&v) = values.iter().find(|&&v| v >= thr && v <= 10.0 * thr) {
        return Err(Error::AmbiguousKernel { cells: cells_hint, singular_value: v });
    }
    let count = values.iter().filter(|&&v| v < thr).count();
    let kernel = vectors.columns(0, count).into_owned();
    Ok(NearNull { values, kernel })
}

/// Estimated decay ratio of edge modes: the root of `lambda^{Rm} det h_{+-}`
/// closest to the unit circle, mapped inside.
pub fn edge_decay_estimate(cm: &ChiralModel, tol: &Tolerances) -> Result<f64> {
    cm.require_balanced()?;
    let rm = cm.range() * cm.half_dim();
    let (coeffs, _) = interpolate_on_circle(|z| z.powu(rm as u32) * det(&cm.h_pm(z)), 2 * rm, 4 * rm + 1);
    let roots = polynomial_roots(&coeffs, tol.coeff)?;
    Ok(roots.iter().map(|z| z.norm().min(1.0 / z.norm())).fold(0.0, f64::max))
}

/// `max(64, ceil(log tau_kernel / log q) + 8R)`.
pub fn default_cells(cm: &ChiralModel, tol: &Tolerances) -> Result<usize> {
    let q = edge_decay_estimate(cm, tol)?;
    let base = 8 * cm.range();
    let extra = if q > 0.0 && q < 1.0 { (tol.kernel.ln() / q.ln()).ceil() as usize } else { 0 };
    Ok((extra + base).clamp(64, MAX_CELLS))
}

fn truncated_at(cm: &ChiralModel, cells: usize, tol: &Tolerances) -> Result<EdgeReport> {
    let m = cm.half_dim();
    let probe = 2 * cm.range() * m + 4;
    let t = truncated_pm(cm, cells);
    let pm = near_null(&t, probe, tol).map_err(|e| with_cells(e, cells))?;
    let mp = near_null(&t.adjoint(), probe, tol).map_err(|e| with_cells(e, cells))?;
    let kernel_pm = left_part(&pm.kernel, cells, m);
    let kernel_mp = left_part(&mp.kernel, cells, m);
    let lengths = kernel_pm
        .column_iter()
        .chain(kernel_mp.column_iter())
        .map(|c| localization_length(&cell_weights(&c.into_owned(), m)))
        .collect();
    Ok(EdgeReport {
        dim_ker_pm: kernel_pm.ncols(),
        dim_ker_mp: kernel_mp.ncols(),
        edge_index: kernel_pm.ncols() as i64 - kernel_mp.ncols() as i64,
        method: EdgeMethod::Truncated,
        singular_values_near_zero: pm.values.iter().take(probe).copied().collect(),
        truncation_cells: cells,
        localization_lengths: lengths,
        decreasing_dims: None,
        decay_ratio: None,
        kernel_pm,
        kernel_mp,
    })
}

fn with_cells(e: Error, cells: usize) -> Error {
    match e {
        Error::AmbiguousKernel { singular_value, .. } => Error::AmbiguousKernel { cells, singular_value },
        other => other,
    }
}

/// Kernel dimensions of the truncated `H_{+-}` and `H_{-+}` restricted to
/// left-localized vectors. With `cells = None` the default truncation is used
/// and doubled while the kernel is ambiguous.
pub fn edge_modes_truncated(cm: &ChiralModel, energy: f64, cells: Option<usize>, tol: &Tolerances) -> Result<EdgeReport> {
    cm.require_balanced()?;
    if energy != 0.0 {
        return Err(Error::InvalidArgument("the graded kernels are defined at zero energy only".into()));
    }
    require_chiral_gap(cm)?;
    match cells {
        Some(n) => {
            if n < 4 * cm.range() {
                return Err(Error::TooFewCells { cells: n, min: 4 * cm.range() });
            }
            truncated_at(cm, n, tol)
        }
        None => {
            let mut n = default_cells(cm, tol)?;
            loop {
                match truncated_at(cm, n, tol) {
                    Err(Error::AmbiguousKernel { .. }) if 2 * n <= MAX_CELLS => n *= 2,
                    other => return other,
                }
            }
        }
    }
}

/// Indices of one graded sector of the initial data space.
fn sector_indices(cm: &ChiralModel, plus: bool) -> Vec<usize> {
    let d = cm.base.dim_v;
    let idx = if plus { &cm.plus_idx } else { &cm.minus_idx };
    (0..2 * cm.range()).flat_map(|c| idx.iter().map(move |&i| c * d + i)).collect()
}

/// Dirichlet data vanish on the first `R` cells; `basis` is orthonormal with
/// `block` coordinates per cell. Returns the intersection dimension, the
/// singular values of the Dirichlet projection and coefficient vectors for
/// an orthonormal intersection basis.
fn dirichlet_intersection(basis: &CMat, range: usize, block: usize) -> (usize, Vec<f64>, CMat) {
    let k = basis.ncols();
    if k == 0 {
        return (0, Vec::new(), CMat::zeros(0, 0));
    }
    let rows: Vec<usize> = (0..range * block).collect();
    let top = select_rows(basis, &rows);
    // Eigenvalues of B_top* B_top are squared cosines against the Dirichlet
    // cells; a zero eigenvalue is a vector vanishing there.
    let (sq, vecs) = hermitian_eigen(&(top.adjoint() * &top));
    let cosines: Vec<f64> = sq.iter().map(|v| v.max(0.0).sqrt()).collect();
    let keep: Vec<usize> = (0..k).filter(|&i| cosines[i] < DIRICHLET_CUT).collect();
    (keep.len(), cosines, select_columns(&vecs, &keep))
}

/// `dim (D_Dir cap D_down^E)` for a model with invertible `A_R`.
pub fn edge_space_dimension(model: &ModelParams, energy: C64, tol: &Tolerances) -> Result<usize> {
    let cm = build_companion(model, energy, tol)?;
    let split = split_matrix(&cm.matrix, energy, tol, true)?;
    Ok(dirichlet_intersection(&split.basis_down, model.range, model.dim_v).0)
}

#[derive(Debug, Clone)]
pub struct SectorSplit {
    pub plus: CompanionSplit,
    pub minus: CompanionSplit,
}

/// Zero-energy companion splitting restricted to the graded sectors.
pub fn graded_split(cm: &ChiralModel, tol: &Tolerances) -> Result<SectorSplit> {
    let comp = build_companion(&cm.base, ZERO, tol)?;
    let p = sector_indices(cm, true);
    let q = sector_indices(cm, false);
    let plus = split_matrix(&submatrix(&comp.matrix, &p, &p), ZERO, tol, true)?;
    let minus = split_matrix(&submatrix(&comp.matrix, &q, &q), ZERO, tol, true)?;
    Ok(SectorSplit { plus, minus })
}

/// Edge-mode dimensions from `D_Dir cap D_down^0` inside each graded sector.
pub fn edge_modes_companion(cm: &ChiralModel, tol: &Tolerances) -> Result<EdgeReport> {
    cm.require_balanced()?;
    let split = graded_split(cm, tol)?;
    let m = cm.half_dim();
    let r_max = cm.range();
    let (pm, sv_pm, c_pm) = dirichlet_intersection(&split.plus.basis_down, r_max, m);
    let (mp, sv_mp, c_mp) = dirichlet_intersection(&split.minus.basis_down, r_max, m);
    let mut sv: Vec<f64> = sv_pm.into_iter().chain(sv_mp).collect();
    sv.sort_by(f64::total_cmp);
    let q = split.plus.decay_ratio().into_iter().chain(split.minus.decay_ratio()).reduce(f64::max);
    let length = q.map_or(0.0, |q| if q > 0.0 { -1.0 / q.ln() } else { 0.0 });
    Ok(EdgeReport {
        dim_ker_pm: pm,
        dim_ker_mp: mp,
        edge_index: pm as i64 - mp as i64,
        method: EdgeMethod::Companion,
        singular_values_near_zero: sv,
        truncation_cells: 0,
        localization_lengths: vec![length; pm + mp],
        decreasing_dims: Some((split.plus.basis_down.ncols(), split.minus.basis_down.ncols())),
        decay_ratio: q,
        kernel_pm: &split.plus.basis_down * c_pm,
        kernel_mp: &split.minus.basis_down * c_mp,
    })
}

/// Truncated route always; the companion route as well when `A_R` is
/// invertible. Disagreement between the two is an error.
pub fn edge_modes(cm: &ChiralModel, cells: Option<usize>, tol: &Tolerances) -> Result<EdgeReport> {
    let trunc = edge_modes_truncated(cm, 0.0, cells, tol)?;
    match edge_modes_companion(cm, tol) {
        Ok(comp) => {
            if (comp.dim_ker_pm, comp.dim_ker_mp) != (trunc.dim_ker_pm, trunc.dim_ker_mp) {
                return Err(Error::NonConvergent(format!(
                    "edge routes disagree: companion ({}, {}), truncated ({}, {})",
                    comp.dim_ker_pm, comp.dim_ker_mp, trunc.dim_ker_pm, trunc.dim_ker_mp
                )));
            }
            Ok(EdgeReport {
                method: EdgeMethod::Both,
                decreasing_dims: comp.decreasing_dims,
                decay_ratio: comp.decay_ratio,
                ..trunc
            })
        }
        Err(Error::SingularLeadingHop { .. }) => Ok(trunc),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Delocalized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InGapState {
    pub energy: f64,
    pub localization_length: f64,
    pub side: Side,
    /// Weight on the left half of the truncation.
    pub left_weight: f64,
}

/// Eigenvalues of the truncated Hamiltonian inside `energy_window`, which
/// must lie in a certified bulk gap. Numerically degenerate eigenvalues are
/// rotated to diagonalize the cell position, so exact left and right edge
/// states come out separated.
pub fn in_gap_scan(model: &ModelParams, cells: usize, energy_window: (f64, f64)) -> Result<Vec<InGapState>> {
    let (lo, hi) = energy_window;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty energy window ({lo}, {hi})")));
    }
    let (bands, gap) = certify_gap(model, Some(0.5 * (lo + hi)), DEFAULT_NUM_K)?;
    let slack = bands.allowance();
    let inside = gap.gapped && gap.e_minus + slack <= lo && hi <= gap.e_plus - slack;
    if !inside {
        return Err(Error::GapNotCertified { margin: gap.certificate_margin });
    }
    let th = truncate_halfspace(model, cells)?;
    let d = model.dim_v;
    let (vals, vecs) = hermitian_eigen(&th.matrix);
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let sel: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > lo && vals[i] < hi).collect();
    let position = CVec::from_fn(cells * d, |i, _| C64::new((i / d) as f64, 0.0));
    let mut out = Vec::with_capacity(sel.len());
    let mut start = 0;
    while start < sel.len() {
        let mut end = start + 1;
        while end < sel.len() && vals[sel[end]] - vals[sel[end - 1]] < 1e-9 * scale {
            end += 1;
        }
        let group = &sel[start..end];
        let basis = select_columns(&vecs, group);
        let rotated = if group.len() > 1 {
            let xb = CMat::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * position[i]);
            let (_, w) = hermitian_eigen(&(basis.adjoint() * xb));
            &basis * w
        } else {
            basis
        };
        for (c, &i) in rotated.column_iter().zip(group) {
            let w = cell_weights(&c.into_owned(), d);
            let total: f64 = w.iter().sum();
            let left: f64 = w[..cells / 2].iter().sum::<f64>() / total;
            let side = if left >= 0.9 {
                Side::Left
            } else if left <= 0.1 {
                Side::Right
            } else {
                Side::Delocalized
            };
            let length = match side {
                Side::Right => localization_length(&w.iter().rev().copied().collect::<Vec<_>>()),
                _ => localization_length(&w),
            };
            out.push(InGapState { energy: vals[i], localization_length: length, side, left_weight: left });
        }
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_chiral_model;
    use crate::fixtures;
    use crate::linalg::{c64, hermitian_eigenvalues};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn dimerized_truncation_spectrum() {
        let th = truncate_halfspace(&fixtures::dimerized_plus().base, 4).unwrap();
        let ev = hermitian_eigenvalues(&th.matrix);
        let zeros = ev.iter().filter(|e| e.abs() < 1e-12).count();
        assert_eq!(zeros, 2);
        assert!(ev.iter().all(|e| e.abs() < 1e-12 || (e.abs() - 1.0).abs() < 1e-12));
        // e_1 (x) (1, 0) is annihilated.
        let mut v = CVec::zeros(8);
        v[0] = c64(1.0, 0.0);
        assert!((&th.matrix * v).norm() == 0.0);
    }

    #[test]
    fn trivial_truncation_has_no_zero_modes() {
        for n in [4, 9, 20] {
            let th = truncate_halfspace(&fixtures::dimerized_trivial().base, n).unwrap();
            let ev = hermitian_eigenvalues(&th.matrix);
            assert!(ev.iter().all(|e| (e.abs() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn too_few_cells() {
        let cm = fixtures::double_root(0.0);
        assert_eq!(truncate_halfspace(&cm.base, 3), Err(Error::TooFewCells { cells: 3, min: 4 }));
    }

    #[test]
    fn truncation_is_hermitian_and_banded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cm = random_chiral_model(&mut rng, 4, 2, 1.0, false);
        let th = truncate_halfspace(&cm.base, 10).unwrap();
        assert!((&th.matrix - th.matrix.adjoint()).norm() < 1e-14);
        for i in 0..40usize {
            for j in 0..40 {
                if (i / 4).abs_diff(j / 4) > 2 {
                    assert_eq!(th.matrix[(i, j)], ZERO);
                }
            }
        }
    }

    #[test]
    fn truncated_block_matches_graded_hamiltonian() {
        let cm = fixtures::double_root(0.3);
        let th = truncate_halfspace(&cm.base, 8).unwrap();
        let plus: Vec<usize> = (0..8).map(|n| 2 * n).collect();
        let minus: Vec<usize> = (0..8).map(|n| 2 * n + 1).collect();
        let block = submatrix(&th.matrix, &minus, &plus);
        assert!((block - truncated_pm(&cm, 8).to_dense()).norm() < 1e-15);
    }

    #[test]
    fn dimerized_edge_indices() {
        let tol = t();
        let cases = [(fixtures::dimerized_plus(), (1, 0)), (fixtures::dimerized_minus(), (0, 1)), (fixtures::dimerized_trivial(), (0, 0))];
        for (cm, dims) in cases {
            let r = edge_modes_truncated(&cm, 0.0, None, &tol).unwrap();
            assert_eq!((r.dim_ker_pm, r.dim_ker_mp), dims);
            assert_eq!(r.edge_index, dims.0 as i64 - dims.1 as i64);
        }
        let swapped = fixtures::dimerized_plus().swapped(&tol).unwrap();
        assert_eq!(edge_modes_truncated(&swapped, 0.0, None, &tol).unwrap().edge_index, -1);
    }

    #[test]
    fn diagonal_endpoint_counts() {
        // h = diag(lambda, lambda, 1/lambda, 1): two lambda, one 1/lambda.
        let tol = t();
        let z = CMat::zeros(4, 4);
        let mut v = z.clone();
        v[(3, 3)] = c64(1.0, 0.0);
        let mut a_pm = z.clone();
        a_pm[(0, 0)] = c64(1.0, 0.0);
        a_pm[(1, 1)] = c64(1.0, 0.0);
        let mut a_mp = z.clone();
        a_mp[(2, 2)] = c64(1.0, 0.0);
        let cm = ChiralModel::from_blocks(v, vec![a_pm], vec![a_mp], &tol).unwrap();
        let r = edge_modes_truncated(&cm, 0.0, None, &tol).unwrap();
        assert_eq!((r.dim_ker_pm, r.dim_ker_mp, r.edge_index), (2, 1, 1));
    }

    #[test]
    fn ssh_truncated_edge_state() {
        let tol = t();
        let cm = fixtures::ssh(1.0, 2.0);
        let r = edge_modes_truncated(&cm, 0.0, Some(60), &tol).unwrap();
        assert_eq!((r.dim_ker_pm, r.dim_ker_mp), (1, 0));
        let v = r.kernel_pm.column(0);
        // psi_n = (-t1/t2)^n; compare ratios so phase and norm drop out.
        for n in 0..20 {
            assert!((v[n + 1] / v[n] - c64(-0.5, 0.0)).norm() < 1e-8, "{n} {}", v[n + 1] / v[n]);
        }
        assert!((r.localization_lengths[0] - 1.0 / 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn double_root_companion_route() {
        let tol = t();
        for theta in [0.0, 1.1, -2.5] {
            let cm = fixtures::double_root(theta);
            let c = edge_modes_companion(&cm, &tol).unwrap();
            assert_eq!((c.dim_ker_pm, c.dim_ker_mp), (1, 0), "theta {theta}");
            assert_eq!(c.decreasing_dims, Some((2, 0)));
            let both = edge_modes(&cm, None, &tol).unwrap();
            assert_eq!(both.method, EdgeMethod::Both);
            assert_eq!(both.edge_index, 1);
        }
    }

    #[test]
    fn companion_edge_vector_is_polynomial_exponential_state() {
        let tol = t();
        let theta = 0.6;
        let cm = fixtures::double_root(theta);
        let c = edge_modes_companion(&cm, &tol).unwrap();
        // + sector data (psi_0, psi_1) restricted to V_+: psi_0 = 0.
        let v = c.kernel_pm.column(0);
        assert!(v[0].norm() < 1e-12 && v[1].norm() > 0.5);
    }

    #[test]
    fn in_gap_scan_dimerized() {
        let states = in_gap_scan(&fixtures::dimerized_plus().base, 16, (-0.9, 0.9)).unwrap();
        assert_eq!(states.len(), 2);
        assert!(states.iter().all(|s| s.energy.abs() < 1e-12));
        assert_eq!(states.iter().filter(|s| s.side == Side::Left).count(), 1);
        assert_eq!(states.iter().filter(|s| s.side == Side::Right).count(), 1);
        let trivial = in_gap_scan(&fixtures::dimerized_trivial().base, 16, (-0.9, 0.9)).unwrap();
        assert!(trivial.is_empty());
    }

    #[test]
    fn in_gap_scan_requires_gap() {
        let err = in_gap_scan(&fixtures::ssh(1.0, 1.0).base, 40, (-0.1, 0.1)).unwrap_err();
        assert!(matches!(err, Error::GapNotCertified { .. }));
        let err = in_gap_scan(&fixtures::dimerized_plus().base, 16, (-2.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::GapNotCertified { .. }));
    }

    #[test]
    fn dirichlet_solution_space_has_dimension_rd() {
        let tol = t();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (d, r) in [(2, 1), (4, 2), (2, 3)] {
            let cm = random_chiral_model(&mut rng, d, r, 1.0, false);
            let comp = build_companion(&cm.base, c64(0.05, 0.0), &tol).unwrap();
            let mut map = CMat::zeros(d * (2 * r + 6), r * d);
            for j in 0..r * d {
                let mut x = CVec::zeros(2 * r * d);
                x[r * d + j] = c64(1.0, 0.0);
                let mode = crate::companion::propagate(&comp, &x, 6, &tol).unwrap();
                let stacked = CVec::from_iterator(d * (2 * r + 6), mode.window.iter().flat_map(|v| v.iter().copied()));
                map.set_column(j, &stacked);
            }
            let sv = crate::linalg::singular_values(&map);
            assert_eq!(sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count(), r * d);
        }
    }

    #[test]
    fn large_truncation_uses_banded_route() {
        let tol = t();
        let cm = fixtures::ssh(1.0, 1.05);
        let r = edge_modes_truncated(&cm, 0.0, None, &tol).unwrap();
        assert!(r.truncation_cells > DENSE_LIMIT);
        assert_eq!((r.dim_ker_pm, r.dim_ker_mp), (1, 0));
        // Too short for the edge state to reach the kernel threshold.
        let short = edge_modes_truncated(&cm, 0.0, Some(150), &tol);
        assert!(matches!(short, Ok(EdgeReport { edge_index: 0, .. }) | Err(Error::AmbiguousKernel { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn routes_agree_and_are_stable(seed in any::<u64>(), r in 1usize..=2, half in 1usize..=2) {
            let tol = t();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_chiral_model(&mut rng, 2 * half, r, 1.0, false);
            prop_assume!(require_chiral_gap(&cm).is_ok_and(|g| g.sampled_margin > 0.05));
            let n = default_cells(&cm, &tol).unwrap();
            prop_assume!(n <= 400);
            let trunc = edge_modes_truncated(&cm, 0.0, None, &tol).unwrap();
            let comp = edge_modes_companion(&cm, &tol).unwrap();
            prop_assert_eq!((trunc.dim_ker_pm, trunc.dim_ker_mp), (comp.dim_ker_pm, comp.dim_ker_mp));
            let twice = edge_modes_truncated(&cm, 0.0, Some(2 * trunc.truncation_cells), &tol).unwrap();
            prop_assert_eq!((twice.dim_ker_pm, twice.dim_ker_mp), (trunc.dim_ker_pm, trunc.dim_ker_mp));
            // Kernel vectors solve the half-space equation.
            let tm = truncated_pm(&cm, trunc.truncation_cells);
            let norm = tm.norm_estimate();
            for c in trunc.kernel_pm.column_iter() {
                prop_assert!(tm.mul_vec(&c.into_owned()).norm() < tol.kernel * norm);
            }
        }

        #[test]
        fn in_gap_spectrum_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_chiral_model(&mut rng, 2, 1, 1.0, false);
            let gap = require_chiral_gap(&cm);
            prop_assume!(gap.is_ok_and(|g| g.sampled_margin > 0.1));
            let m = crate::spectrum::chiral_gap_margin(&cm, 512).unwrap();
            let w = 0.8 * m;
            let states = in_gap_scan(&cm.base, 60, (-w, w)).unwrap();
            let mut es: Vec<f64> = states.iter().map(|s| s.energy).collect();
            es.sort_by(f64::total_cmp);
            for i in 0..es.len() {
                prop_assert!((es[i] + es[es.len() - 1 - i]).abs() < 1e-9);
            }
        }
    }
}
