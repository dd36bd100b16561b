//! Bulk winding number of `det h_{+-}` on the unit circle, by phase
//! unwrapping and independently by counting polynomial roots.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, det, eigenvalues, CMat, C64, ZERO};
use crate::model::ChiralModel;
use crate::spectrum::require_chiral_gap;
use crate::tol::{Tolerances, MAX_WINDING_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindingResult {
    pub winding: i64,
    pub method_phase: i64,
    pub method_roots: Option<i64>,
    pub samples_used: usize,
    pub min_abs_det: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopWinding {
    pub winding: i64,
    pub samples: usize,
    pub min_abs: f64,
}

/// Winding of `k -> f(e^{ik})` around zero. The grid doubles until every
/// phase increment is below `pi/2`; the compensated sum must then be within
/// `1e-6` of a multiple of `2 pi`. Callers pass `initial_samples` above four
/// times the Laurent degree of `f` so the first grid cannot alias.
pub fn loop_winding<F: Fn(C64) -> C64>(f: F, initial_samples: usize) -> Result<LoopWinding> {
    let mut n = initial_samples.max(8);
    loop {
        let values: Vec<C64> = (0..n).map(|i| f(C64::from_polar(1.0, 2.0 * PI * i as f64 / n as f64))).collect();
        let min_abs = values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if !(min_abs > 0.0) {
            return Err(Error::GapNotCertified { margin: 0.0 });
        }
        let incs: Vec<f64> = (0..n).map(|i| (values[(i + 1) % n] / values[i]).arg()).collect();
        if incs.iter().all(|x| x.abs() < PI / 2.0) {
            let turns = compensated_sum(incs) / (2.0 * PI);
            let w = turns.round();
            if (turns - w).abs() * 2.0 * PI > 1e-6 {
                return Err(Error::NonConvergent(format!("phase sum {turns} turns is not an integer")));
            }
            return Ok(LoopWinding { winding: w as i64, samples: n, min_abs });
        }
        if 2 * n > MAX_WINDING_SAMPLES {
            return Err(Error::NonConvergent(format!("phase unwrapping needs more than {MAX_WINDING_SAMPLES} samples")));
        }
        n *= 2;
    }
}

/// Phase-unwrapping winding of `det h_{+-}`.
pub fn winding_phase(cm: &ChiralModel, initial_samples: usize) -> Result<WindingResult> {
    cm.require_balanced()?;
    require_chiral_gap(cm)?;
    let lw = loop_winding(|z| det(&cm.h_pm(z)), initial_samples)?;
    Ok(WindingResult {
        winding: lw.winding,
        method_phase: lw.winding,
        method_roots: None,
        samples_used: lw.samples,
        min_abs_det: lw.min_abs,
    })
}

/// Coefficients `c_0..c_deg` of a polynomial from its values at `m` roots of
/// unity, `m > deg`. Coefficients above `deg` are returned separately as the
/// fit residual.
pub fn interpolate_on_circle<F: Fn(C64) -> C64>(f: F, deg: usize, m: usize) -> (Vec<C64>, f64) {
    let nodes: Vec<C64> = (0..m).map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64)).collect();
    let values: Vec<C64> = nodes.iter().map(|&z| f(z)).collect();
    let coeff = |k: usize| {
        let mut acc = ZERO;
        for j in 0..m {
            acc += values[j] * nodes[(j * k) % m].conj();
        }
        acc / m as f64
    };
    let all: Vec<C64> = (0..m).map(coeff).collect();
    let scale = all.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let resid = all[deg + 1..].iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
    (all[..=deg].to_vec(), resid)
}

/// Polynomial roots, with trimming of relatively tiny coefficients. Tiny
/// trailing low-order coefficients count as roots at zero.
pub fn polynomial_roots(coeffs: &[C64], tol_coeff: f64) -> Result<Vec<C64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::GapNotCertified { margin: 0.0 });
    }
    let keep = |c: &C64| c.norm() > tol_coeff * scale;
    let lo = coeffs.iter().position(keep).expect("some coefficient is the maximum");
    let hi = coeffs.iter().rposition(keep).expect("some coefficient is the maximum");
    let mut roots = vec![ZERO; lo];
    let deg = hi - lo;
    if deg > 0 {
        let lead = coeffs[hi];
        let mut comp = CMat::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = C64::new(1.0, 0.0);
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = -coeffs[lo + i] / lead;
        }
        roots.extend(eigenvalues(&comp)?);
    }
    Ok(roots)
}

/// Argument-principle winding: roots of `lambda^{R m} det h_{+-}` inside the
/// unit disk, minus `R m`.
pub fn winding_roots(cm: &ChiralModel, tol: &Tolerances) -> Result<i64> {
    cm.require_balanced()?;
    let rm = cm.range() * cm.half_dim();
    let (coeffs, resid) = interpolate_on_circle(|z| z.powu(rm as u32) * det(&cm.h_pm(z)), 2 * rm, 4 * rm + 1);
    if resid > tol.fit {
        return Err(Error::InterpolationResidual { residual: resid });
    }
    let roots = polynomial_roots(&coeffs, tol.coeff)?;
    let mut inside = 0i64;
    for z in roots {
        let gap = (z.norm() - 1.0).abs();
        if gap < tol.rho {
            return Err(Error::GapNotCertified { margin: gap });
        }
        if z.norm() < 1.0 {
            inside += 1;
        }
    }
    Ok(inside - rm as i64)
}

/// Both methods; disagreement is reported as a numerical failure.
pub fn bulk_winding(cm: &ChiralModel, tol: &Tolerances) -> Result<WindingResult> {
    let mut w = winding_phase(cm, 256)?;
    let roots = winding_roots(cm, tol)?;
    if roots != w.method_phase {
        return Err(Error::NonConvergent(format!(
            "winding methods disagree: phase {} roots {roots}",
            w.method_phase
        )));
    }
    w.method_roots = Some(roots);
    Ok(w)
}

/// `(k, det h_{+-}(e^{ik}))` on a uniform grid, for plotting.
pub fn det_curve(cm: &ChiralModel, samples: usize) -> Vec<(f64, C64)> {
    crate::spectrum::k_grid(samples).map(|k| (k, det(&cm.h_pm(C64::from_polar(1.0, k))))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_chiral_model;
    use crate::fixtures;
    use crate::linalg::c64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimerized_windings() {
        let t = Tolerances::default();
        assert_eq!(bulk_winding(&fixtures::dimerized_plus(), &t).unwrap().winding, 1);
        assert_eq!(bulk_winding(&fixtures::dimerized_minus(), &t).unwrap().winding, -1);
        let triv = bulk_winding(&fixtures::dimerized_trivial(), &t).unwrap();
        assert_eq!((triv.winding, triv.method_roots), (0, Some(0)));
    }

    #[test]
    fn double_root_winds_once() {
        let t = Tolerances::default();
        for i in 0..16 {
            let theta = -PI + 2.0 * PI * i as f64 / 16.0;
            let w = bulk_winding(&fixtures::double_root(theta), &t).unwrap();
            assert_eq!((w.winding, w.method_roots), (1, Some(1)), "theta {theta}");
        }
    }

    #[test]
    fn double_root_symbol_has_double_root_inside() {
        let theta = 0.8;
        let cm = fixtures::double_root(theta);
        let (c, resid) = interpolate_on_circle(|z| z * det(&cm.h_pm(z)), 2, 5);
        assert!(resid < 1e-14);
        let roots = polynomial_roots(&c, 1e-10).unwrap();
        for r in roots {
            assert!((r + C64::from_polar(0.5, -theta)).norm() < 1e-7);
        }
    }

    #[test]
    fn ssh_rule() {
        let t = Tolerances::default();
        for (t1, t2, w) in [(1.0, 2.0, 1), (2.0, 1.0, 0), (1.0, -2.0, 1), (0.5, 0.2, 0)] {
            let r = bulk_winding(&fixtures::ssh(t1, t2), &t).unwrap();
            assert_eq!(r.winding, w, "{t1} {t2}");
        }
    }

    #[test]
    fn gapless_symbol_rejected() {
        let t = Tolerances::default();
        assert!(matches!(winding_phase(&fixtures::ssh(1.0, 1.0), 64), Err(Error::GapNotCertified { .. })));
        assert!(matches!(winding_roots(&fixtures::ssh(1.0, 1.0), &t), Err(Error::GapNotCertified { .. })));
    }

    #[test]
    fn fast_loop_forces_refinement() {
        let lw = loop_winding(|z| z.powu(5), 16).unwrap();
        assert_eq!(lw.winding, 5);
        assert_eq!(lw.samples, 32);
    }

    #[test]
    fn zero_coefficients_deflate() {
        // z^2 (z - 3): two roots at zero, one outside.
        let roots = polynomial_roots(&[ZERO, c64(1e-14, 0.0), c64(-3.0, 0.0), c64(1.0, 0.0)], 1e-10).unwrap();
        assert_eq!(roots.len(), 3);
        assert_eq!(roots.iter().filter(|z| z.norm() < 1.0).count(), 2);
        // Vanishing leading coefficient lowers the degree.
        let roots = polynomial_roots(&[c64(-0.5, 0.0), c64(1.0, 0.0), c64(1e-13, 0.0)], 1e-10).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - c64(0.5, 0.0)).norm() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn methods_agree_and_respect_bounds(seed in any::<u64>(), r in 1usize..=3, half in 1usize..=2, singular: bool) {
            let t = Tolerances::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_chiral_model(&mut rng, 2 * half, r, 1.0, singular);
            prop_assume!(require_chiral_gap(&cm).is_ok_and(|g| g.sampled_margin > 1e-3));
            let w = bulk_winding(&cm, &t).unwrap();
            prop_assert!(w.winding.abs() <= (r * half) as i64);
            // Antisymmetry under exchanging the graded blocks.
            let mp = loop_winding(|z| det(&cm.h_mp(z)), 256).unwrap();
            prop_assert_eq!(mp.winding, -w.winding);
        }
    }
}
