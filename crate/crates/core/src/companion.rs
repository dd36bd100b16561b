//! Transfer (companion) matrix of the bulk recurrence, its spectral splitting
//! into decrease / Bloch / increase subspaces, and propagation of initial data.
//!
//! Initial data for range `R` is the stacked vector `(psi_{1-R}, ..., psi_R)`
//! of `2R` consecutive cells; `C_E` shifts it one cell to the right.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    cluster_eigenvalues, condition_number, det, identity, inverse, singular_values, solve, Cluster, CMat, CVec, Schur,
    C64,
};
use crate::model::ModelParams;
use crate::tol::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct CompanionMatrix {
    pub energy: C64,
    pub matrix: CMat,
    pub model_ref: ModelParams,
}

impl CompanionMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Last block row: `psi_{n+2R} = sum_c row[c] psi_{n+c}`.
    fn last_row(&self) -> Vec<CMat> {
        let d = self.model_ref.dim_v;
        let n = self.dim();
        (0..2 * self.model_ref.range).map(|c| self.matrix.view((n - d, c * d), (d, d)).into_owned()).collect()
    }
}

pub fn build_companion(model: &ModelParams, energy: C64, tol: &Tolerances) -> Result<CompanionMatrix> {
    let cond = condition_number(model.leading_hop());
    if !(cond <= tol.sing) {
        return Err(Error::SingularLeadingHop { condition: cond });
    }
    let d = model.dim_v;
    let r_max = model.range;
    let n = 2 * r_max * d;
    let a_inv = inverse(model.leading_hop()).ok_or(Error::SingularLeadingHop { condition: f64::INFINITY })?;
    let mut c = CMat::zeros(n, n);
    for b in 0..2 * r_max - 1 {
        c.view_mut((b * d, (b + 1) * d), (d, d)).copy_from(&identity(d));
    }
    let v_e = &model.on_site - identity(d) * energy;
    let row = (2 * r_max - 1) * d;
    for col in 0..2 * r_max {
        let coef = if col < r_max {
            &model.left_hops[r_max - col - 1]
        } else if col == r_max {
            &v_e
        } else {
            &model.right_hops[col - r_max - 1]
        };
        c.view_mut((row, col * d), (d, d)).copy_from(&(-(&a_inv * coef)));
    }
    Ok(CompanionMatrix { energy, matrix: c, model_ref: model.clone() })
}

/// Largest relative deviation of `det(lambda - C_E)` from
/// `lambda^{R d} det(H(lambda) - E) / det(A_R)` over the probes.
pub fn char_poly_residual(model: &ModelParams, energy: C64, probes: &[C64], tol: &Tolerances) -> Result<f64> {
    let cm = build_companion(model, energy, tol)?;
    let n = cm.dim();
    let det_a = det(model.leading_hop());
    let mut worst = 0.0f64;
    for &lam in probes {
        if lam == C64::new(0.0, 0.0) {
            return Err(Error::ZeroMomentum);
        }
        let lhs = det(&(identity(n) * lam - &cm.matrix));
        let h = model.hamiltonian(lam) - identity(model.dim_v) * energy;
        let rhs = lam.powu((model.range * model.dim_v) as u32) * det(&h) / det_a;
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1.0));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Decrease,
    Bloch,
    Increase,
}

#[derive(Debug, Clone)]
pub struct CompanionSplit {
    pub energy: C64,
    /// Clustered eigenvalues with algebraic multiplicities.
    pub eigenvalues: Vec<Cluster>,
    /// Orthonormal basis of the decrease subspace.
    pub basis_down: CMat,
    pub basis_bloch: CMat,
    pub basis_up: CMat,
    pub unit_circle_tolerance: f64,
    pub schur: Schur,
}

impl CompanionSplit {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.basis_down.ncols(), self.basis_bloch.ncols(), self.basis_up.ncols())
    }

    pub fn max_multiplicity(&self) -> usize {
        self.eigenvalues.iter().map(|c| c.multiplicity).max().unwrap_or(0)
    }

    /// Largest modulus among decreasing eigenvalues.
    pub fn decay_ratio(&self) -> Option<f64> {
        self.eigenvalues
            .iter()
            .filter(|c| sector_of(c.center, self.unit_circle_tolerance) == Sector::Decrease)
            .map(|c| c.center.norm())
            .reduce(f64::max)
    }

    /// Smallest modulus among increasing eigenvalues.
    pub fn growth_ratio(&self) -> Option<f64> {
        self.eigenvalues
            .iter()
            .filter(|c| sector_of(c.center, self.unit_circle_tolerance) == Sector::Increase)
            .map(|c| c.center.norm())
            .reduce(f64::min)
    }
}

pub fn sector_of(lambda: C64, rho: f64) -> Sector {
    let r = lambda.norm();
    if r < 1.0 - rho {
        Sector::Decrease
    } else if r > 1.0 + rho {
        Sector::Increase
    } else {
        Sector::Bloch
    }
}

/// Split `D` into the generalized eigenspaces inside, on and outside the unit
/// circle. Each basis is the leading block of a reordered Schur form. With
/// `demand_clean`, any eigenvalue in the unit-circle band is an error.
pub fn spectral_split(cm: &CompanionMatrix, tol: &Tolerances, demand_clean: bool) -> Result<CompanionSplit> {
    split_matrix(&cm.matrix, cm.energy, tol, demand_clean)
}

/// [`spectral_split`] for any square matrix, e.g. a graded sector of `C_0`.
pub fn split_matrix(matrix: &CMat, energy: C64, tol: &Tolerances, demand_clean: bool) -> Result<CompanionSplit> {
    let schur = Schur::new(matrix)?;
    let values = schur.eigenvalues();
    let clusters = cluster_eigenvalues(&values, tol.cluster);
    let rho = tol.rho;
    if demand_clean {
        if let Some(c) = clusters.iter().find(|c| sector_of(c.center, rho) == Sector::Bloch) {
            return Err(Error::BorderlineEigenvalue { modulus: c.center.norm() });
        }
    }
    // Classify through the cluster center so a split defective eigenvalue
    // cannot straddle the band edge.
    let class = |z: C64| {
        let c = clusters
            .iter()
            .min_by(|a, b| (a.center - z).norm().total_cmp(&(b.center - z).norm()))
            .expect("nonempty spectrum");
        sector_of(c.center, rho)
    };
    let basis = |s: Sector| {
        let mut sc = schur.clone();
        let k = sc.reorder(|z| class(z) == s);
        sc.leading_basis(k)
    };
    let mut ordered = schur.clone();
    ordered.reorder(|z| class(z) == Sector::Decrease);
    let (basis_down, basis_bloch, basis_up) = (basis(Sector::Decrease), basis(Sector::Bloch), basis(Sector::Increase));
    Ok(CompanionSplit {
        energy,
        eigenvalues: clusters,
        basis_down,
        basis_bloch,
        basis_up,
        unit_circle_tolerance: rho,
        schur: ordered,
    })
}

/// Whether the clustered spectrum is invariant under `lambda -> 1/conj(lambda)`
/// with matching multiplicities.
pub fn duality_check(split: &CompanionSplit, tol: &Tolerances) -> bool {
    split.eigenvalues.iter().all(|c| {
        if c.center.norm() == 0.0 {
            return false;
        }
        let dual = c.center.conj().inv();
        let reach = 10.0 * tol.cluster * dual.norm().max(1.0);
        split
            .eigenvalues
            .iter()
            .any(|o| (o.center - dual).norm() <= reach && o.multiplicity == c.multiplicity)
    })
}

/// Sizes of the Jordan chain probe: `dim ker (C - lambda)^k` for `k = 1..=m`.
pub fn kernel_dimensions(cm: &CompanionMatrix, lambda: C64, max_power: usize, tol: &Tolerances) -> Vec<usize> {
    let n = cm.dim();
    let shifted = &cm.matrix - identity(n) * lambda;
    let scale = singular_values(&cm.matrix)[0].max(1.0);
    let mut power = identity(n);
    let mut out = Vec::with_capacity(max_power);
    for k in 1..=max_power {
        power = &power * &shifted;
        // Perturbations of a k-fold root move it by eps^{1/k}; the rank cut
        // follows the clustering radius.
        let cut = tol.cluster * scale.powi(k as i32);
        out.push(singular_values(&power).iter().filter(|&&s| s <= cut).count());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Decrease,
    Bloch,
    Increase,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMode {
    pub energy: C64,
    /// Cell index of `window[0]`.
    pub n_min: i64,
    pub window: Vec<CVec>,
    pub classification: ModeClass,
    /// Largest relative recurrence residual over interior cells.
    pub residual: f64,
}

impl LatticeMode {
    pub fn n_max(&self) -> i64 {
        self.n_min + self.window.len() as i64 - 1
    }

    pub fn at(&self, n: i64) -> Option<&CVec> {
        usize::try_from(n - self.n_min).ok().and_then(|i| self.window.get(i))
    }
}

fn classify(split: &CompanionSplit, x: &CVec, tol: &Tolerances) -> ModeClass {
    let nx = x.norm();
    let inside = |b: &CMat| b.ncols() > 0 && (x - b * (b.adjoint() * x)).norm() <= tol.num.sqrt() * nx;
    if inside(&split.basis_down) {
        ModeClass::Decrease
    } else if inside(&split.basis_bloch) {
        ModeClass::Bloch
    } else if inside(&split.basis_up) {
        ModeClass::Increase
    } else {
        ModeClass::Mixed
    }
}

/// Iterate the recurrence `steps` cells to the right of the initial data.
pub fn propagate(cm: &CompanionMatrix, initial: &CVec, steps: usize, tol: &Tolerances) -> Result<LatticeMode> {
    propagate_both(cm, initial, 0, steps, tol)
}

/// Propagate `backward` cells to the left (needs `B_R` invertible) and
/// `forward` cells to the right of the initial window.
pub fn propagate_both(
    cm: &CompanionMatrix,
    initial: &CVec,
    backward: usize,
    forward: usize,
    tol: &Tolerances,
) -> Result<LatticeMode> {
    let model = &cm.model_ref;
    let d = model.dim_v;
    let r_max = model.range;
    if initial.len() != 2 * r_max * d {
        return Err(Error::ShapeMismatch(format!("initial data has length {}, expected {}", initial.len(), 2 * r_max * d)));
    }
    if forward + backward < 1 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let mut cells: std::collections::VecDeque<CVec> =
        (0..2 * r_max).map(|c| initial.rows(c * d, d).into_owned()).collect();
    let row = cm.last_row();
    for _ in 0..forward {
        let base = cells.len() - 2 * r_max;
        let mut next = CVec::zeros(d);
        for (c, blk) in row.iter().enumerate() {
            next += blk * &cells[base + c];
        }
        cells.push_back(next);
    }
    if backward > 0 {
        let cond = condition_number(model.trailing_hop());
        if !(cond <= tol.sing) {
            return Err(Error::SingularRightHop { condition: cond });
        }
        let v_e = &model.on_site - identity(d) * cm.energy;
        for _ in 0..backward {
            // Cell n is determined from n+1..n+2R by the equation at n+R.
            let mut rhs = &v_e * &cells[r_max - 1];
            for r in 1..r_max {
                rhs += &model.left_hops[r - 1] * &cells[r_max - 1 - r];
            }
            for r in 1..=r_max {
                rhs += &model.right_hops[r - 1] * &cells[r_max - 1 + r];
            }
            let rhs = DMatrix::from_column_slice(d, 1, (-rhs).as_slice());
            let prev = solve(model.trailing_hop(), &rhs).ok_or(Error::SingularRightHop { condition: f64::INFINITY })?;
            cells.push_front(DVector::from_column_slice(prev.as_slice()));
        }
    }
    let window: Vec<CVec> = cells.into_iter().collect();
    let n_min = 1 - r_max as i64 - backward as i64;
    let residual = recurrence_residual(model, cm.energy, &window);
    let split = spectral_split(cm, tol, false)?;
    Ok(LatticeMode { energy: cm.energy, n_min, window, classification: classify(&split, initial, tol), residual })
}

/// Largest `||(H - E) psi||_n` over interior cells, relative to the local
/// scale `max ||coefficient|| * max_{|m-n|<=R} ||psi_m||`.
pub fn recurrence_residual(model: &ModelParams, energy: C64, window: &[CVec]) -> f64 {
    let r_max = model.range;
    let d = model.dim_v;
    let scale = model.coefficient_scale().max(energy.norm()).max(f64::MIN_POSITIVE);
    let v_e = &model.on_site - identity(d) * energy;
    let mut worst = 0.0f64;
    for n in r_max..window.len().saturating_sub(r_max) {
        let mut res = &v_e * &window[n];
        for r in 1..=r_max {
            res += &model.left_hops[r - 1] * &window[n - r];
            res += &model.right_hops[r - 1] * &window[n + r];
        }
        let local = (n - r_max..=n + r_max).map(|m| window[m].norm()).fold(0.0, f64::max);
        if local > 0.0 {
            worst = worst.max(res.norm() / (scale * local));
        }
    }
    worst
}

/// Per-cell geometric rate from the fit
/// `log ||psi_n|| = a + n log(rate) + c log n`.
pub fn decay_rate(mode: &LatticeMode, tol: &Tolerances) -> Result<f64> {
    let len = mode.window.len();
    let norms: Vec<f64> = mode.window.iter().map(|v| v.norm()).collect();
    let peak = norms.iter().copied().fold(0.0, f64::max);
    if peak < tol.num {
        return Err(Error::ZeroMode);
    }
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0 && x.is_finite())
        .map(|(i, &x)| ((mode.n_min + i as i64) as f64, x.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::WindowTooShort { len, min: 4 });
    }
    let shift = (1.0 - pts[0].0).max(0.0);
    let a = DMatrix::from_fn(pts.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => pts[i].0,
        _ => (pts[i].0 + shift).ln(),
    });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let sol = a.svd(true, true).solve(&b, 1e-12).map_err(|e| Error::NonConvergent(e.to_string()))?;
    Ok(sol[1].exp())
}

/// `decay_rate` with the window-length requirement `>= 4R` of the model.
pub fn decay_rate_checked(mode: &LatticeMode, range: usize, tol: &Tolerances) -> Result<f64> {
    if mode.window.len() < 4 * range {
        return Err(Error::WindowTooShort { len: mode.window.len(), min: 4 * range });
    }
    decay_rate(mode, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_self_adjoint_model;
    use crate::fixtures;
    use crate::linalg::{c64, ONE, ZERO};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_chain() -> ModelParams {
        let one = CMat::from_element(1, 1, ONE);
        ModelParams::hermitian(CMat::zeros(1, 1), vec![one], &Tolerances::default()).unwrap()
    }

    #[test]
    fn scalar_chain_companion() {
        let t = Tolerances::default();
        let cm = build_companion(&scalar_chain(), ZERO, &t).unwrap();
        let want = CMat::from_row_slice(2, 2, &[ZERO, ONE, -ONE, ZERO]);
        assert_eq!(cm.matrix, want);
        let r = char_poly_residual(&scalar_chain(), ZERO, &[c64(0.0, 1.0)], &t).unwrap();
        assert!(r < 1e-15);
        let split = spectral_split(&cm, &t, false).unwrap();
        assert_eq!(split.dims(), (0, 2, 0));
        assert!(matches!(spectral_split(&cm, &t, true), Err(Error::BorderlineEigenvalue { .. })));
        assert!(duality_check(&split, &t));
    }

    #[test]
    fn dimerized_is_singular() {
        let t = Tolerances::default();
        let err = build_companion(&fixtures::dimerized_plus().base, ZERO, &t).unwrap_err();
        assert!(matches!(err, Error::SingularLeadingHop { .. }));
    }

    #[test]
    fn double_root_generalized_eigenvector() {
        let t = Tolerances::default();
        for theta in [0.0, 0.4, -2.5] {
            let cm = build_companion(&fixtures::double_root(theta).base, ZERO, &t).unwrap();
            let shift = C64::from_polar(0.5, -theta);
            let x = CVec::from_vec(vec![ZERO, ZERO, ONE, ZERO]);
            let y = (&cm.matrix + identity(4) * shift) * &x;
            let want = CVec::from_vec(vec![ONE, ZERO, -shift, ZERO]);
            assert!((y - want).norm() < 1e-14);
        }
    }

    #[test]
    fn double_root_spectrum_and_char_poly() {
        let t = Tolerances::default();
        for theta in [0.0, 1.0, -2.5] {
            let model = fixtures::double_root(theta).base;
            let cm = build_companion(&model, ZERO, &t).unwrap();
            let split = spectral_split(&cm, &t, true).unwrap();
            let e = C64::from_polar(1.0, -theta);
            assert_eq!(split.eigenvalues.len(), 2);
            assert_eq!(split.eigenvalues[0].multiplicity, 2);
            assert_eq!(split.eigenvalues[1].multiplicity, 2);
            assert!((split.eigenvalues[0].center + 0.5 * e).norm() < 1e-9);
            assert!((split.eigenvalues[1].center + 2.0 * e).norm() < 1e-9);
            assert_eq!(split.dims(), (2, 0, 2));
            assert!(duality_check(&split, &t));
            // Both double roots are defective: one eigenvector each.
            assert_eq!(kernel_dimensions(&cm, -0.5 * e, 2, &t), vec![1, 2]);
            assert_eq!(kernel_dimensions(&cm, -2.0 * e, 2, &t), vec![1, 2]);
            // det(lambda - C_0) against the factored form; the off-diagonal
            // product lambda^2 H_01 H_10 carries the extra factor e^{2i theta}/4.
            let ei = C64::from_polar(1.0, theta);
            assert!((det(&model.right_hops[0]) + 0.25 * ei * ei).norm() < 1e-15);
            for lam in [c64(0.3, 0.2), c64(-1.0, 1.5)] {
                let lhs = det(&(identity(4) * lam - &cm.matrix));
                let monic = (lam + 0.5 * e).powu(2) * (lam + 2.0 * e).powu(2);
                assert!((lhs - monic).norm() < 1e-12 * monic.norm().max(1.0));
                let h = model.hamiltonian(lam);
                let product = lam * lam * h[(0, 1)] * h[(1, 0)];
                assert!((product - 0.25 * ei * ei * monic).norm() < 1e-12 * monic.norm().max(1.0));
            }
        }
    }

    #[test]
    fn double_root_polynomial_exponential_mode() {
        let t = Tolerances::default();
        for theta in [0.0, std::f64::consts::FRAC_PI_3, -2.5] {
            let cm = build_companion(&fixtures::double_root(theta).base, ZERO, &t).unwrap();
            let x = CVec::from_vec(vec![ZERO, ZERO, ONE, ZERO]);
            let mode = propagate(&cm, &x, 3, &t).unwrap();
            let e = C64::from_polar(1.0, -theta);
            let want = [ONE, -e, 0.75 * e * e, -0.5 * e * e * e];
            for (n, w) in (1..=4).zip(want) {
                let psi = mode.at(n).unwrap();
                assert!((psi[0] - w).norm() < 1e-12 && psi[1].norm() < 1e-12, "n={n}");
            }
            assert_eq!(mode.classification, ModeClass::Decrease);
            assert!(mode.residual < 1e-14);
            let long = propagate(&cm, &x, 60, &t).unwrap();
            assert!((decay_rate(&long, &t).unwrap() - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn eigenvector_data_is_exponential() {
        let t = Tolerances::default();
        let model = fixtures::ssh(1.0, 2.0);
        // Perturb so A_R is invertible, keeping the model chiral.
        let mut a_mp = model.a_mp.clone();
        a_mp[0][(0, 0)] = c64(0.3, 0.0);
        let cm_model =
            crate::model::ChiralModel::from_blocks(model.v_block.clone(), model.a_pm.clone(), a_mp, &t).unwrap();
        let cm = build_companion(&cm_model.base, c64(0.2, 0.0), &t).unwrap();
        let eig = crate::linalg::eigenvalues(&cm.matrix).unwrap();
        let lam = eig[0];
        let n = cm.dim();
        let shifted = &cm.matrix - identity(n) * lam;
        let dec = crate::linalg::svd(&shifted);
        let v: CVec = dec.v.column(n - 1).into_owned();
        let mode = propagate(&cm, &v, 10, &t).unwrap();
        let u = mode.at(0).unwrap().clone();
        for k in 0..mode.window.len() {
            let nn = mode.n_min + k as i64;
            let want = &u * crate::linalg::cpowi(lam, nn);
            assert!((&mode.window[k] - want).norm() < 1e-8 * (1.0 + mode.window[k].norm()));
        }
    }

    #[test]
    fn scalar_jordan_chain_is_linear_times_exponential() {
        // psi_{n+2} = 2 mu psi_{n+1} - mu^2 psi_n has the double root mu.
        let t = Tolerances::default();
        let mu = 0.6;
        let a = CMat::from_element(1, 1, c64(1.0, 0.0));
        let b = CMat::from_element(1, 1, c64(mu * mu, 0.0));
        let v = CMat::from_element(1, 1, c64(-2.0 * mu, 0.0));
        let model = crate::model::build_model(1, 1, v, vec![b], vec![a], &t).unwrap();
        let cm = build_companion(&model, ZERO, &t).unwrap();
        let x = CVec::from_vec(vec![ZERO, c64(mu, 0.0)]);
        let mode = propagate(&cm, &x, 20, &t).unwrap();
        for k in 0..mode.window.len() {
            let n = (mode.n_min + k as i64) as i32;
            assert!((mode.window[k][0].re - n as f64 * mu.powi(n)).abs() < 1e-12);
        }
        assert!((decay_rate(&mode, &t).unwrap() - mu).abs() < 1e-9);
    }

    #[test]
    fn bloch_mode_rate_is_one() {
        let t = Tolerances::default();
        let cm = build_companion(&scalar_chain(), ZERO, &t).unwrap();
        let x = CVec::from_vec(vec![ONE, c64(0.0, 1.0)]);
        let mode = propagate(&cm, &x, 40, &t).unwrap();
        assert_eq!(mode.classification, ModeClass::Bloch);
        assert!((decay_rate(&mode, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mode_and_short_window() {
        let t = Tolerances::default();
        let cm = build_companion(&scalar_chain(), ZERO, &t).unwrap();
        let mode = propagate(&cm, &CVec::zeros(2), 8, &t).unwrap();
        assert_eq!(decay_rate(&mode, &t), Err(Error::ZeroMode));
        let short = propagate(&cm, &CVec::from_vec(vec![ONE, ONE]), 1, &t).unwrap();
        assert!(matches!(decay_rate_checked(&short, 1, &t), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn backward_matches_forward() {
        let t = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_self_adjoint_model(&mut rng, 2, 2, 1.0);
        let cm = build_companion(&model, c64(0.1, 0.0), &t).unwrap();
        let x = CVec::from_fn(8, |i, _| c64(i as f64, 1.0));
        let fwd = propagate(&cm, &x, 3, &t).unwrap();
        let later: CVec = CVec::from_iterator(8, (3..7).flat_map(|i| fwd.window[i].iter().copied()));
        let back = propagate_both(&cm, &later, 3, 1, &t).unwrap();
        // The second run starts three cells later, so windows align by position.
        assert_eq!(back.window.len(), fwd.window.len() + 1);
        for (f, b) in fwd.window.iter().zip(&back.window) {
            assert!((f - b).norm() < 1e-9 * (1.0 + f.norm()));
        }
        assert!(back.residual < 1e-12);
    }

    #[test]
    fn singular_trailing_hop_blocks_backward() {
        let t = Tolerances::default();
        let a = CMat::from_element(1, 1, ONE);
        let m = crate::model::build_model(1, 1, CMat::zeros(1, 1), vec![CMat::zeros(1, 1)], vec![a], &t).unwrap();
        let cm = build_companion(&m, ZERO, &t).unwrap();
        let err = propagate_both(&cm, &CVec::from_vec(vec![ONE, ONE]), 1, 1, &t).unwrap_err();
        assert!(matches!(err, Error::SingularRightHop { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn char_poly_identity_holds(seed in any::<u64>(), d in 1usize..=4, r in 1usize..=3) {
            let t = Tolerances::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_self_adjoint_model(&mut rng, d, r, 1.0);
            let e = c64(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5));
            let probes: Vec<C64> = (0..16)
                .map(|_| C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(-3.2..3.2)))
                .collect();
            if let Ok(res) = char_poly_residual(&model, e, &probes, &t) {
                prop_assert!(res < 1e-8, "residual {res}");
            }
        }

        #[test]
        fn split_is_complete_and_dual(seed in any::<u64>(), d in 1usize..=4, r in 1usize..=3) {
            let t = Tolerances::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_self_adjoint_model(&mut rng, d, r, 1.0);
            let e = c64(rng.random_range(-2.0..2.0), 0.0);
            let cm = build_companion(&model, e, &t).unwrap();
            let split = spectral_split(&cm, &t, false).unwrap();
            let (a, b, c) = split.dims();
            prop_assert_eq!(a + b + c, 2 * r * d);
            let mut all = split.basis_down.clone().resize_horizontally(a + b + c, ZERO);
            all.view_mut((0, a), (2 * r * d, b)).copy_from(&split.basis_bloch);
            all.view_mut((0, a + b), (2 * r * d, c)).copy_from(&split.basis_up);
            let sv = singular_values(&all);
            prop_assert!(sv[sv.len() - 1] > 1e-8);
            prop_assert!(duality_check(&split, &t));
        }

        #[test]
        fn decreasing_data_decays(seed in any::<u64>(), r in 1usize..=2) {
            let t = Tolerances::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_self_adjoint_model(&mut rng, 2, r, 1.0);
            let cm = build_companion(&model, ZERO, &t).unwrap();
            let split = spectral_split(&cm, &t, false).unwrap();
            let q = split.decay_ratio();
            prop_assume!(q.is_some_and(|q| q < 0.9));
            // Forward iteration amplifies roundoff along the fastest growing
            // mode, so stop once decay has set in.
            let steps = ((1e-3f64).ln() / q.unwrap().ln()).ceil() as usize + 4 * r;
            let fastest = split.eigenvalues.iter().map(|c| c.center.norm()).fold(1.0, f64::max);
            prop_assume!(f64::EPSILON * fastest.powi(steps as i32) < 1e-6);
            for j in 0..split.basis_down.ncols() {
                let x: CVec = split.basis_down.column(j).into_owned();
                let mode = propagate(&cm, &x, steps, &t).unwrap();
                prop_assert_eq!(mode.classification, ModeClass::Decrease);
                let head = mode.window[..2 * r].iter().map(|v| v.norm()).fold(0.0, f64::max);
                let tail = mode.window[mode.window.len() - 2 * r..].iter().map(|v| v.norm()).fold(0.0, f64::max);
                prop_assert!(tail < 1e-2 * head.max(1e-3), "head {head} tail {tail}");
            }
        }
    }
}
