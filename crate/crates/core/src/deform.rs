//! Constructive homotopies that reduce a gapped chiral symbol `h_{+-}` to a
//! diagonal loop of `lambda`, `lambda^{-1}` and `1` entries, with sampled
//! invertibility certificates and winding checks along every stage.
//!
//! Stages, in order: rotate `lambda^{-R}` out of `h_{+-} (+) 1`, split the
//! `lambda^{-R}` block into `lambda^{-1}` factors, linearize the polynomial
//! part, normalize and deform the linear loop to `lambda Q + (1 - Q)`,
//! diagonalize `Q`, and permute into the canonical order.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::halfspace::{edge_modes_truncated, EdgeReport};
use crate::linalg::{c64, cpowi, eigenvalues, identity, inverse, min_singular_value, svd, CMat, Schur, C64, ONE, ZERO};
use crate::model::ChiralModel;
use crate::spectrum::require_chiral_gap;
use crate::tol::{Tolerances, MAX_CERT_GRID};
use crate::winding::loop_winding;

/// Total `(t, k)` evaluations allowed while refining one stage.
pub const MAX_CERT_EVALUATIONS: usize = 1 << 20;

/// Square Laurent loop `sum_j c_j lambda^j`, `j = lowest_power ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLoop {
    pub size: usize,
    pub lowest_power: i64,
    pub coefficients: Vec<CMat>,
}

impl MatrixLoop {
    pub fn new(lowest_power: i64, coefficients: Vec<CMat>) -> Result<Self> {
        let size = coefficients.first().map(|c| c.nrows()).ok_or_else(|| Error::InvalidArgument("loop without coefficients".into()))?;
        if coefficients.iter().any(|c| c.nrows() != size || c.ncols() != size) {
            return Err(Error::ShapeMismatch("loop coefficients must be square of one size".into()));
        }
        Ok(MatrixLoop { size, lowest_power, coefficients })
    }

    pub fn constant(m: CMat) -> Self {
        MatrixLoop { size: m.nrows(), lowest_power: 0, coefficients: vec![m] }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(identity(n))
    }

    /// `lambda^k` times the identity.
    pub fn monomial(n: usize, k: i64) -> Self {
        MatrixLoop { size: n, lowest_power: k, coefficients: vec![identity(n)] }
    }

    pub fn highest_power(&self) -> i64 {
        self.lowest_power + self.coefficients.len() as i64 - 1
    }

    pub fn coefficient(&self, j: i64) -> CMat {
        let i = j - self.lowest_power;
        if i < 0 || i >= self.coefficients.len() as i64 {
            CMat::zeros(self.size, self.size)
        } else {
            self.coefficients[i as usize].clone()
        }
    }

    pub fn eval(&self, lambda: C64) -> CMat {
        let mut acc = CMat::zeros(self.size, self.size);
        for c in self.coefficients.iter().rev() {
            acc = acc * lambda + c;
        }
        acc * cpowi(lambda, self.lowest_power)
    }

    pub fn add(&self, other: &MatrixLoop) -> MatrixLoop {
        assert_eq!(self.size, other.size);
        let lo = self.lowest_power.min(other.lowest_power);
        let hi = self.highest_power().max(other.highest_power());
        let coefficients = (lo..=hi).map(|j| self.coefficient(j) + other.coefficient(j)).collect();
        MatrixLoop { size: self.size, lowest_power: lo, coefficients }
    }

    pub fn mul(&self, other: &MatrixLoop) -> MatrixLoop {
        assert_eq!(self.size, other.size);
        let len = self.coefficients.len() + other.coefficients.len() - 1;
        let mut coefficients = vec![CMat::zeros(self.size, self.size); len];
        for (i, a) in self.coefficients.iter().enumerate() {
            for (j, b) in other.coefficients.iter().enumerate() {
                coefficients[i + j] += a * b;
            }
        }
        MatrixLoop { size: self.size, lowest_power: self.lowest_power + other.lowest_power, coefficients }
    }

    pub fn scale(&self, z: C64) -> MatrixLoop {
        self.map(|c| c * z)
    }

    pub fn left_mul(&self, m: &CMat) -> MatrixLoop {
        self.map(|c| m * c)
    }

    pub fn right_mul(&self, m: &CMat) -> MatrixLoop {
        self.map(|c| c * m)
    }

    fn map<F: Fn(&CMat) -> CMat>(&self, f: F) -> MatrixLoop {
        MatrixLoop { size: self.size, lowest_power: self.lowest_power, coefficients: self.coefficients.iter().map(f).collect() }
    }

    pub fn direct_sum(&self, other: &MatrixLoop) -> MatrixLoop {
        let n = self.size + other.size;
        let lo = self.lowest_power.min(other.lowest_power);
        let hi = self.highest_power().max(other.highest_power());
        let coefficients = (lo..=hi)
            .map(|j| {
                let mut c = CMat::zeros(n, n);
                c.view_mut((0, 0), (self.size, self.size)).copy_from(&self.coefficient(j));
                c.view_mut((self.size, self.size), (other.size, other.size)).copy_from(&other.coefficient(j));
                c
            })
            .collect();
        MatrixLoop { size: n, lowest_power: lo, coefficients }
    }

    /// Identity summand of size `count` inserted at index `pos`.
    pub fn insert_identity(&self, pos: usize, count: usize) -> MatrixLoop {
        let n = self.size + count;
        let map = |i: usize| if i < pos { i } else { i + count };
        let lo = self.lowest_power.min(0);
        let hi = self.highest_power().max(0);
        let coefficients = (lo..=hi)
            .map(|j| {
                let old = self.coefficient(j);
                let mut c = CMat::zeros(n, n);
                for r in 0..self.size {
                    for s in 0..self.size {
                        c[(map(r), map(s))] = old[(r, s)];
                    }
                }
                if j == 0 {
                    for i in pos..pos + count {
                        c[(i, i)] = ONE;
                    }
                }
                c
            })
            .collect();
        MatrixLoop { size: n, lowest_power: lo, coefficients }
    }

    /// Drop exactly zero outer coefficients.
    pub fn trimmed(&self) -> MatrixLoop {
        let nz = |c: &CMat| c.iter().any(|z| *z != ZERO);
        match (self.coefficients.iter().position(nz), self.coefficients.iter().rposition(nz)) {
            (Some(a), Some(b)) => MatrixLoop {
                size: self.size,
                lowest_power: self.lowest_power + a as i64,
                coefficients: self.coefficients[a..=b].to_vec(),
            },
            _ => MatrixLoop { size: self.size, lowest_power: 0, coefficients: vec![CMat::zeros(self.size, self.size)] },
        }
    }

    /// `sum_j ||c_j||_F`, a bound for `max ||h(lambda)||` on the circle.
    pub fn norm_bound(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm()).sum()
    }

    /// Bound on `|d h / d k|` on the circle.
    pub fn lipschitz_bound(&self) -> f64 {
        self.coefficients.iter().enumerate().map(|(i, c)| (self.lowest_power + i as i64).unsigned_abs() as f64 * c.norm()).sum()
    }

    /// Largest difference between coefficients of equal power.
    pub fn distance(&self, other: &MatrixLoop) -> f64 {
        self.add(&other.scale(c64(-1.0, 0.0))).norm_bound()
    }

    /// Samples that cannot alias the winding of `det`.
    pub fn winding_samples(&self) -> usize {
        let span = (self.highest_power().unsigned_abs().max(self.lowest_power.unsigned_abs())) as usize;
        4 * self.size * span.max(1) + 8
    }

    pub fn winding(&self) -> Result<i64> {
        Ok(loop_winding(|z| crate::linalg::det(&self.eval(z)), self.winding_samples())?.winding)
    }

    pub fn min_singular_on_circle(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| min_singular_value(&self.eval(C64::from_polar(1.0, -PI + 2.0 * PI * i as f64 / samples as f64))))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagonal entries `(power of lambda)` when every coefficient is
    /// diagonal with a single unit entry per position.
    pub fn diagonal_powers(&self, tol: f64) -> Option<Vec<i64>> {
        let mut out = vec![None; self.size];
        for (i, c) in self.coefficients.iter().enumerate() {
            for r in 0..self.size {
                for s in 0..self.size {
                    let z = c[(r, s)];
                    if r != s && z.norm() > tol {
                        return None;
                    }
                    if r == s && z.norm() > tol {
                        if (z - ONE).norm() > tol || out[r].is_some() {
                            return None;
                        }
                        out[r] = Some(self.lowest_power + i as i64);
                    }
                }
            }
        }
        out.into_iter().collect()
    }
}

/// `h_{+-}` of a balanced chiral model as a loop with lowest power `-R`.
pub fn loop_from_model(cm: &ChiralModel) -> Result<MatrixLoop> {
    cm.require_balanced()?;
    MatrixLoop::new(-(cm.range() as i64), cm.h_pm_coefficients())
}

/// Inverse of [`loop_from_model`]: the range is the larger of the two
/// outer powers.
pub fn model_from_loop(l: &MatrixLoop, tol: &Tolerances) -> Result<ChiralModel> {
    let r = l.highest_power().max(-l.lowest_power).max(1) as usize;
    let a_pm = (1..=r as i64).map(|j| l.coefficient(j)).collect();
    let a_mp = (1..=r as i64).map(|j| l.coefficient(-j).adjoint()).collect();
    ChiralModel::from_blocks(l.coefficient(0), a_pm, a_mp, tol)
}

type LoopFamily = Arc<dyn Fn(f64) -> MatrixLoop + Send + Sync>;

/// One homotopy stage over `parameter_range` with its sampled certificate.
#[derive(Clone, Serialize)]
pub struct Stage {
    pub description: String,
    pub parameter_range: (f64, f64),
    pub size: usize,
    pub grid_t: usize,
    pub grid_k: usize,
    /// Smallest singular value over the `(t, k)` grid.
    pub min_singular: f64,
    /// `min_singular` minus a Lipschitz allowance for the grid spacing.
    pub certified_margin: f64,
    pub winding: i64,
    /// `(position, count)` of identity summands inserted into the previous
    /// end point to form this stage's start.
    pub stabilization: Option<(usize, usize)>,
    #[serde(skip)]
    family: LoopFamily,
}

impl fmt::Debug for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stage")
            .field("description", &self.description)
            .field("size", &self.size)
            .field("min_singular", &self.min_singular)
            .field("winding", &self.winding)
            .finish()
    }
}

impl Stage {
    pub fn at(&self, t: f64) -> MatrixLoop {
        (self.family)(t)
    }

    pub fn start(&self) -> MatrixLoop {
        self.at(self.parameter_range.0)
    }

    pub fn end(&self) -> MatrixLoop {
        self.at(self.parameter_range.1)
    }

    /// `(t, k, sigma_min)` on a uniform grid, for plotting.
    pub fn surface(&self, grid_t: usize, grid_k: usize) -> Vec<(f64, f64, f64)> {
        let (a, b) = self.parameter_range;
        let mut out = Vec::with_capacity(grid_t * grid_k);
        for i in 0..grid_t {
            let t = a + (b - a) * i as f64 / (grid_t.max(2) - 1) as f64;
            let l = self.at(t);
            for k in crate::spectrum::k_grid(grid_k) {
                out.push((t, k, min_singular_value(&l.eval(C64::from_polar(1.0, k)))));
            }
        }
        out
    }
}

/// Wraps the family `t -> family(t)` and certifies it: sampled invertibility
/// with grid refinement, and a constant winding at every sampled `t`.
pub fn certify_stage<F>(description: &str, parameter_range: (f64, f64), family: F, tol: &Tolerances) -> Result<Stage>
where
    F: Fn(f64) -> MatrixLoop + Send + Sync + 'static,
{
    let family: LoopFamily = Arc::new(family);
    let (a, b) = parameter_range;
    let probe = family(a);
    let mut nt = 9;
    let mut nk = probe.winding_samples().next_power_of_two().max(32);
    let (loops, min, margin) = loop {
        let ts: Vec<f64> = (0..nt).map(|i| a + (b - a) * i as f64 / (nt - 1) as f64).collect();
        let loops: Vec<MatrixLoop> = ts.iter().map(|&t| family(t)).collect();
        let scale = loops.iter().map(|l| l.norm_bound()).fold(0.0, f64::max);
        let mut min = f64::INFINITY;
        for l in &loops {
            for k in crate::spectrum::k_grid(nk) {
                min = min.min(min_singular_value(&l.eval(C64::from_polar(1.0, k))));
            }
        }
        let h = (b - a).abs() / (nt - 1) as f64;
        let lip_k = loops.iter().map(|l| l.lipschitz_bound()).fold(0.0, f64::max);
        let lip_t = loops.windows(2).map(|w| w[1].distance(&w[0]) / h.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        let allow_k = lip_k * PI / nk as f64;
        let allow_t = lip_t * h / 2.0;
        let margin = min - allow_k - allow_t;
        let certified = min > tol.cert * scale.max(1.0) && margin > 0.0;
        let room = |n: usize, other: usize| 2 * n <= MAX_CERT_GRID && 2 * n * other <= MAX_CERT_EVALUATIONS;
        if certified {
            break (loops, min, margin);
        }
        if allow_k >= allow_t && room(nk, nt) {
            nk *= 2;
        } else if room(nt, nk) {
            nt = 2 * nt - 1;
        } else if room(nk, nt) {
            nk *= 2;
        } else {
            if min <= tol.cert * scale.max(1.0) {
                return Err(Error::CertificateFailed { stage: description.to_string(), min_singular: min });
            }
            break (loops, min, margin);
        }
    };
    let windings = loops.iter().map(|l| l.winding()).collect::<Result<Vec<_>>>()?;
    if windings.iter().any(|&w| w != windings[0]) {
        return Err(Error::WindingNotConstant { stage: description.to_string() });
    }
    Ok(Stage {
        description: description.to_string(),
        parameter_range,
        size: probe.size,
        grid_t: nt,
        grid_k: nk,
        min_singular: min,
        certified_margin: margin,
        winding: windings[0],
        stabilization: None,
        family,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HomotopyPath {
    pub stages: Vec<Stage>,
    pub winding_per_stage: Vec<i64>,
}

impl HomotopyPath {
    fn new(stages: Vec<Stage>) -> Self {
        let winding_per_stage = stages.iter().map(|s| s.winding).collect();
        HomotopyPath { stages, winding_per_stage }
    }

    pub fn start(&self) -> Option<MatrixLoop> {
        self.stages.first().map(Stage::start)
    }

    pub fn end(&self) -> Option<MatrixLoop> {
        self.stages.last().map(Stage::end)
    }

    pub fn winding_constant(&self) -> bool {
        self.winding_per_stage.windows(2).all(|w| w[0] == w[1])
    }

    pub fn min_certificate(&self) -> f64 {
        self.stages.iter().map(|s| s.min_singular).fold(f64::INFINITY, f64::min)
    }

    /// Largest mismatch between the end of a stage and the start of the
    /// next, after inserting the declared identity summands.
    pub fn join_defect(&self) -> f64 {
        self.stages
            .windows(2)
            .map(|w| {
                let mut e = w[0].end();
                if let Some((pos, count)) = w[1].stabilization {
                    e = e.insert_identity(pos, count);
                }
                let s = w[1].start();
                if e.size != s.size {
                    return f64::INFINITY;
                }
                e.distance(&s)
            })
            .fold(0.0, f64::max)
    }

    fn append(&mut self, other: HomotopyPath) {
        self.stages.extend(other.stages);
        self.winding_per_stage.extend(other.winding_per_stage);
    }
}

/// `diag(u, 1) R(t) diag(u^{-1}, 1) R(t)^{-1}` on the blocks `[i0, i0 + m)`
/// and `[j0, j0 + m)` of an `n`-dimensional identity, `u = lambda^k`. The
/// determinant is one for every `t`; at `t = pi/2` it is `diag(u, u^{-1})`.
fn rotation_loop(n: usize, i0: usize, j0: usize, m: usize, k: i64, t: f64) -> MatrixLoop {
    let (s, c) = t.sin_cos();
    let lo = -k.abs();
    let len = (2 * k.abs() + 1) as usize;
    let mut coeffs = vec![CMat::zeros(n, n); len];
    let at = |p: i64| (p - lo) as usize;
    for i in 0..n {
        let inside = (i >= i0 && i < i0 + m) || (i >= j0 && i < j0 + m);
        if !inside {
            coeffs[at(0)][(i, i)] = ONE;
        }
    }
    let cs = c64(c * s, 0.0);
    for d in 0..m {
        let (i, j) = (i0 + d, j0 + d);
        coeffs[at(0)][(i, i)] += c64(c * c, 0.0);
        coeffs[at(k)][(i, i)] += c64(s * s, 0.0);
        coeffs[at(0)][(i, j)] += cs;
        coeffs[at(k)][(i, j)] -= cs;
        coeffs[at(-k)][(j, i)] += cs;
        coeffs[at(0)][(j, i)] -= cs;
        coeffs[at(-k)][(j, j)] += c64(s * s, 0.0);
        coeffs[at(0)][(j, j)] += c64(c * c, 0.0);
    }
    MatrixLoop { size: n, lowest_power: lo, coefficients: coeffs }
}

/// Stabilize `base` by `1_m` and rotate `lambda^k` out of the block starting
/// at `block`: the end point is `base . diag(lambda^k on the block) (+)
/// lambda^{-k} 1_m`.
pub fn rotation_stage(description: &str, base: &MatrixLoop, block: usize, m: usize, k: i64, tol: &Tolerances) -> Result<Stage> {
    let (n, j0) = (base.size + m, base.size);
    let stab = base.direct_sum(&MatrixLoop::identity(m));
    let mut st = certify_stage(description, (0.0, FRAC_PI_2), move |t| stab.mul(&rotation_loop(n, block, j0, m, k, t)).trimmed(), tol)?;
    st.stabilization = Some((j0, m));
    Ok(st)
}

/// From `h (+) 1` to `p (+) lambda^{-R} 1` with `p = lambda^R h`, then
/// `lambda^{-R} 1` split into `R` copies of `lambda^{-1} 1`.
pub fn stabilize_and_factor(l: &MatrixLoop, tol: &Tolerances) -> Result<HomotopyPath> {
    let r = -l.lowest_power;
    if r < 1 {
        return Err(Error::InvalidArgument(format!("expected a negative lowest power, got {}", l.lowest_power)));
    }
    let m = l.size;
    let first = rotation_stage("stabilize by 1 and rotate lambda^R into h", l, 0, m, r, tol)?;
    let mut current = first.end();
    let mut stages = vec![first];
    // The block after p holds lambda^{-(R - j + 1)}; each step peels one
    // lambda^{-1} factor off it into a new trailing block.
    for j in 1..r {
        let st = rotation_stage(&format!("split lambda^-1 factor {j} of {}", r - 1), &current, m, m, 1, tol)?;
        current = st.end();
        stages.push(st);
    }
    Ok(HomotopyPath::new(stages))
}

/// Path of invertible constant matrices from `1` (at `s = 0`) to `k`
/// (at `s = 1`): `e^{i phi s} ((1 - s) + s e^{-i phi} k)`, with `phi`
/// chosen so that no eigenvalue of `e^{-i phi} k` is near the negative axis.
pub fn gl_path(k: &CMat) -> Result<impl Fn(f64) -> CMat + Send + Sync + 'static> {
    let ev = eigenvalues(k)?;
    let dist = |z: C64| if z.re >= 0.0 { z.norm() } else { z.im.abs() };
    let score = |phi: f64| ev.iter().map(|&mu| dist(mu * C64::from_polar(1.0, -phi))).fold(f64::INFINITY, f64::min);
    let phi = (0..360).map(|i| -PI + 2.0 * PI * i as f64 / 360.0).fold((0.0, f64::NEG_INFINITY), |best, phi| {
        let s = score(phi);
        if s > best.1 + 1e-12 { (phi, s) } else { best }
    });
    if !(phi.1 > 0.0) {
        return Err(Error::InvalidArgument("matrix is singular".into()));
    }
    let (phi, k) = (phi.0, k.clone());
    let n = k.nrows();
    Ok(move |s: f64| (identity(n) * c64(1.0 - s, 0.0) + &k * (C64::from_polar(s, -phi))) * C64::from_polar(1.0, phi * s))
}

/// Companion-style linearization of a polynomial loop `p` of degree `D`:
/// block rows `-lambda x_i + x_{i+1}` and a last row `sum P_i x_i + lambda
/// P_D x_{D-1}`. It equals `p (+) 1` up to unimodular factors.
pub fn linearize(p: &MatrixLoop) -> Result<MatrixLoop> {
    Ok(linearize_path(p, &Tolerances::default())?.1)
}

/// Homotopy from `p (+) 1_{m(D-1)}` to its linearization, and the linear
/// loop itself. Degree `D <= 1` passes through with an empty path.
pub fn linearize_path(p: &MatrixLoop, tol: &Tolerances) -> Result<(HomotopyPath, MatrixLoop)> {
    if p.lowest_power < 0 {
        return Err(Error::InvalidArgument("linearization needs a polynomial loop".into()));
    }
    let big_d = p.highest_power().max(0) as usize;
    if big_d <= 1 {
        let l = MatrixLoop::new(0, (0..=1).map(|j| p.coefficient(j)).collect())?;
        return Ok((HomotopyPath::new(Vec::new()), l));
    }
    let m = p.size;
    let n = m * big_d;
    let blk = move |c: &mut CMat, i: usize, j: usize, v: &CMat| c.view_mut((i * m, j * m), (m, m)).copy_from(v);
    let eye = identity(m);

    // Cyclic block shift S: (i, i + 1) = 1, (D - 1, 0) = 1, and a unitary
    // path to it through its Fourier eigenbasis.
    let shift_path = move |s: f64| {
        let d = big_d;
        let mut out = CMat::zeros(n, n);
        for a in 0..d {
            for b in 0..d {
                // S = F diag(w^k) F*, with S e_b = e_{b-1}: eigenvalues
                // w^k for the vectors f_k(b) = w^{kb}/sqrt(d).
                let mut acc = ZERO;
                for kk in 0..d {
                    let theta = {
                        let raw = 2.0 * PI * kk as f64 / d as f64;
                        if raw > PI { raw - 2.0 * PI } else { raw }
                    };
                    let fa = C64::from_polar(1.0, 2.0 * PI * (kk * a) as f64 / d as f64);
                    let fb = C64::from_polar(1.0, -2.0 * PI * (kk * b) as f64 / d as f64);
                    acc += fa * fb * C64::from_polar(1.0, theta * s);
                }
                let v = acc / d as f64;
                for i in 0..m {
                    out[(a * m + i, b * m + i)] = v;
                }
            }
        }
        out
    };

    let pdiag = p.direct_sum(&MatrixLoop::identity(n - m));
    let mut stages = Vec::new();
    let pd = pdiag.clone();
    let mut first = certify_stage("stabilize p by 1 and permute block rows", (0.0, 1.0), move |s| pd.left_mul(&shift_path(s)).trimmed(), tol)?;
    first.stabilization = Some((m, n - m));
    stages.push(first);

    // W(s): (i, i + 1) = 1, (i, i) = -s lambda for 1 <= i <= D - 2, (D - 1, 0) = p.
    let p_w = p.clone();
    let eye_w = eye.clone();
    let w_loop = move |s: f64| {
        let eye = &eye_w;
        let mut c0 = CMat::zeros(n, n);
        let mut c1 = CMat::zeros(n, n);
        for i in 0..big_d - 1 {
            blk(&mut c0, i, i + 1, eye);
            if i >= 1 {
                blk(&mut c1, i, i, &(eye * c64(-s, 0.0)));
            }
        }
        let base = MatrixLoop { size: n, lowest_power: 0, coefficients: vec![c0, c1] };
        let mut pc = vec![CMat::zeros(n, n); big_d + 1];
        for (j, c) in pc.iter_mut().enumerate() {
            blk(c, big_d - 1, 0, &p_w.coefficient(j as i64));
        }
        base.add(&MatrixLoop { size: n, lowest_power: 0, coefficients: pc })
    };
    let w1 = w_loop.clone();
    stages.push(certify_stage("unimodular bidiagonal block to linear form", (0.0, 1.0), move |s| w1(s).trimmed(), tol)?);

    // Last block row, columns 1..D: P_i for i <= D - 2 and P_{D-1} + lambda P_D.
    let p_y = p.clone();
    let y_loop = move || {
        let mut c0 = CMat::zeros(n, n);
        let mut c1 = CMat::zeros(n, n);
        for i in 1..big_d {
            blk(&mut c0, big_d - 1, i, &p_y.coefficient(i as i64));
        }
        blk(&mut c1, big_d - 1, big_d - 1, &p_y.coefficient(big_d as i64));
        MatrixLoop { size: n, lowest_power: 0, coefficients: vec![c0, c1] }
    };
    let y = y_loop();
    let w_end = w_loop(1.0);
    let (w2, y2) = (w_end.clone(), y.clone());
    stages.push(certify_stage("row operation adding the last block row", (0.0, 1.0), move |s| w2.add(&y2.scale(c64(s, 0.0))).trimmed(), tol)?);

    // Column operation x_0 -= sum_{i >= 1} lambda^i x_i.
    let x = w_end.add(&y);
    let mut u_coeffs = vec![CMat::zeros(n, n); big_d];
    for i in 1..big_d {
        blk(&mut u_coeffs[i], i, 0, &eye);
    }
    let u = MatrixLoop { size: n, lowest_power: 0, coefficients: u_coeffs };
    let x2 = x.clone();
    let u2 = u.clone();
    stages.push(certify_stage(
        "column operation eliminating powers of lambda",
        (0.0, 1.0),
        move |s| x2.mul(&MatrixLoop::identity(n).add(&u2.scale(c64(-s, 0.0)))).trimmed(),
        tol,
    )?);
    let full = x.mul(&MatrixLoop::identity(n).add(&u.scale(c64(-1.0, 0.0)))).trimmed();
    if full.highest_power() > 1 {
        return Err(Error::NonConvergent("linearization left higher powers".into()));
    }
    let lin = MatrixLoop::new(0, (0..=1).map(|j| full.coefficient(j)).collect())?;
    Ok((HomotopyPath::new(stages), lin))
}

/// Spectral projector of `c` for eigenvalues with real part above one half.
pub fn half_plane_projector(c: &CMat, tol: &Tolerances) -> Result<(CMat, usize)> {
    for mu in eigenvalues(c)? {
        if (mu.re - 0.5).abs() < tol.cluster * mu.norm().max(1.0) {
            return Err(Error::SpectrumOnCriticalLine { re: mu.re, im: mu.im });
        }
    }
    let mut schur = Schur::new(c)?;
    let k = schur.reorder(|mu| mu.re > 0.5);
    let n = c.nrows();
    if k == 0 {
        return Ok((CMat::zeros(n, n), 0));
    }
    if k == n {
        return Ok((identity(n), n));
    }
    Ok((schur.leading_projector(k).0, k))
}

/// Normalize `l = lambda C + D` by `(C + D)^{-1}` and deform the resulting
/// `1 + C'(lambda - 1)` linearly to `lambda Q + (1 - Q)`, `Q` the spectral
/// projector of `C'` for `Re mu > 1/2`. Returns the path and `rank Q`.
pub fn projectionize(l: &MatrixLoop, tol: &Tolerances) -> Result<(HomotopyPath, usize)> {
    if l.lowest_power < 0 || l.highest_power() > 1 {
        return Err(Error::InvalidArgument("projection stage needs a linear loop".into()));
    }
    let (c, d) = (l.coefficient(1), l.coefficient(0));
    let k = inverse(&(&c + &d)).ok_or_else(|| Error::InvalidArgument("l(1) is singular".into()))?;
    let kp = gl_path(&k)?;
    let l1 = l.clone();
    let first = certify_stage("multiply by (C + D)^-1", (0.0, 1.0), move |s| l1.left_mul(&kp(s)), tol)?;
    let cp = &k * &c;
    let (q, rank) = half_plane_projector(&cp, tol)?;
    let n = l.size;
    let second = certify_stage(
        "linear homotopy from C' to its spectral projector",
        (0.0, 1.0),
        move |s| {
            let cs = &cp * c64(1.0 - s, 0.0) + &q * c64(s, 0.0);
            MatrixLoop { size: n, lowest_power: 0, coefficients: vec![identity(n) - &cs, cs] }
        },
        tol,
    )?;
    Ok((HomotopyPath::new(vec![first, second]), rank))
}

/// Basis adapted to a projector: range first, then kernel.
fn projector_basis(q: &CMat, rank: usize) -> CMat {
    let n = q.nrows();
    let range = svd(q).u.columns(0, rank).into_owned();
    let comp = svd(&(identity(n) - q)).u.columns(0, n - rank).into_owned();
    let mut v = CMat::zeros(n, n);
    v.columns_mut(0, rank).copy_from(&range);
    v.columns_mut(rank, n - rank).copy_from(&comp);
    v
}

/// Conjugation path `g(s) base g(s)^{-1}` for a path `g` of invertibles.
fn conjugation_stage<G>(description: &str, base: MatrixLoop, g: G, tol: &Tolerances) -> Result<Stage>
where
    G: Fn(f64) -> CMat + Send + Sync + 'static,
{
    certify_stage(
        description,
        (0.0, 1.0),
        move |s| {
            let gs = g(s);
            let gi = inverse(&gs).expect("path matrices are invertible");
            base.left_mul(&gs).right_mul(&gi)
        },
        tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EndpointCounts {
    pub lambda: usize,
    pub lambda_inverse: usize,
    pub one: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Deformation {
    pub path: HomotopyPath,
    pub winding: i64,
    pub projection_rank: usize,
    pub counts: EndpointCounts,
    /// Diagonal of the end loop as powers of `lambda`.
    pub endpoint_powers: Vec<i64>,
    pub endpoint_edge: EdgeReport,
    pub join_defect: f64,
}

/// All stages from `h_{+-}` to `diag(lambda, .., lambda^{-1}, .., 1, ..)`.
pub fn full_deformation(cm: &ChiralModel, tol: &Tolerances) -> Result<Deformation> {
    cm.require_balanced()?;
    require_chiral_gap(cm)?;
    let h = loop_from_model(cm)?;
    let winding = h.winding()?;
    let m = h.size;
    let r = cm.range();
    let tail = MatrixLoop::monomial(r * m, -1);

    let mut path = stabilize_and_factor(&h, tol)?;
    let factored = path.end().expect("factoring has a stage");
    let p = MatrixLoop::new(0, (0..=2 * r as i64).map(|j| factored.coefficient(j).view((0, 0), (m, m)).into_owned()).collect())?;

    let (lin_path, lin) = linearize_path(&p, tol)?;
    for st in lin_path.stages {
        let tail = tail.clone();
        let inner = st.clone();
        let mut stage = certify_stage(&st.description, st.parameter_range, move |s| inner.at(s).direct_sum(&tail), tol)?;
        stage.stabilization = st.stabilization;
        path.append(HomotopyPath::new(vec![stage]));
    }

    let (proj_path, rank) = projectionize(&lin, tol)?;
    for st in proj_path.stages {
        let tail = tail.clone();
        let inner = st.clone();
        let mut stage = certify_stage(&st.description, st.parameter_range, move |s| inner.at(s).direct_sum(&tail), tol)?;
        stage.stabilization = st.stabilization;
        path.append(HomotopyPath::new(vec![stage]));
    }

    let n_lin = lin.size;
    let q = path.end().expect("projection stage").coefficient(1).view((0, 0), (n_lin, n_lin)).into_owned();
    let v = projector_basis(&q, rank);
    let mut diag = vec![CMat::zeros(n_lin, n_lin), CMat::zeros(n_lin, n_lin)];
    for i in 0..n_lin {
        diag[usize::from(i < rank)][(i, i)] = ONE;
    }
    let diag_loop = MatrixLoop { size: n_lin, lowest_power: 0, coefficients: diag }.direct_sum(&tail);
    let total = diag_loop.size;
    let vfull = crate::linalg::direct_sum(&[&v, &identity(r * m)]);
    let vp = gl_path(&vfull)?;
    path.append(HomotopyPath::new(vec![conjugation_stage("diagonalize the projector", diag_loop.clone(), move |s| vp(1.0 - s), tol)?]));

    // Canonical order: lambda, lambda^{-1}, 1.
    let order: Vec<usize> = (0..rank).chain(n_lin..total).chain(rank..n_lin).collect();
    let mut perm = CMat::zeros(total, total);
    for (new, &old) in order.iter().enumerate() {
        perm[(new, old)] = ONE;
    }
    let pp = gl_path(&perm)?;
    path.append(HomotopyPath::new(vec![conjugation_stage("permute into canonical order", diag_loop, pp, tol)?]));

    let end = path.end().expect("stages exist");
    let powers = end.diagonal_powers(1e-9).ok_or_else(|| Error::NonConvergent("end point is not a diagonal monomial loop".into()))?;
    let counts = EndpointCounts {
        lambda: powers.iter().filter(|&&k| k == 1).count(),
        lambda_inverse: powers.iter().filter(|&&k| k == -1).count(),
        one: powers.iter().filter(|&&k| k == 0).count(),
    };
    // Round to the exact diagonal before building the end-point model.
    let exact = MatrixLoop {
        size: total,
        lowest_power: -1,
        coefficients: (-1..=1i64).map(|k| CMat::from_fn(total, total, |i, j| if i == j && powers[i] == k { ONE } else { ZERO })).collect(),
    };
    let endpoint_edge = edge_modes_truncated(&model_from_loop(&exact, tol)?, 0.0, None, tol)?;
    let join_defect = path.join_defect();
    Ok(Deformation { path, winding, projection_rank: rank, counts, endpoint_powers: powers, endpoint_edge, join_defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_chiral_model;
    use crate::fixtures;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(lowest: i64, c: &[C64]) -> MatrixLoop {
        MatrixLoop::new(lowest, c.iter().map(|&z| CMat::from_element(1, 1, z)).collect()).unwrap()
    }

    #[test]
    fn loops_of_examples() {
        let l = loop_from_model(&fixtures::dimerized_plus()).unwrap().trimmed();
        assert_eq!(l, scalar(1, &[ONE]));
        let l = loop_from_model(&fixtures::dimerized_trivial()).unwrap().trimmed();
        assert_eq!(l, scalar(0, &[ONE]));
        let l = loop_from_model(&fixtures::ssh(1.0, 2.0)).unwrap().trimmed();
        assert_eq!(l, scalar(0, &[ONE, c64(2.0, 0.0)]));
    }

    #[test]
    fn model_round_trip() {
        let t = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cm = random_chiral_model(&mut rng, 4, 2, 1.0, false);
        let l = loop_from_model(&cm).unwrap();
        let back = model_from_loop(&l, &t).unwrap();
        assert_eq!(loop_from_model(&back).unwrap(), l);
        let z = C64::from_polar(1.0, 0.4);
        assert!((back.h_pm(z) - cm.h_pm(z)).norm() < 1e-14);
    }

    #[test]
    fn rotation_has_unit_determinant() {
        for k in [-2, 1, 3] {
            for t in [0.0, 0.3, 1.0, FRAC_PI_2] {
                let m = rotation_loop(4, 0, 2, 2, k, t);
                for th in [0.1, 2.0] {
                    let d = crate::linalg::det(&m.eval(C64::from_polar(1.0, th)));
                    assert!((d - ONE).norm() < 1e-12);
                }
            }
            let end = rotation_loop(2, 0, 1, 1, k, FRAC_PI_2).trimmed();
            let z = C64::from_polar(1.0, 0.7);
            let e = end.eval(z);
            assert!((e[(0, 0)] - cpowi(z, k)).norm() < 1e-12 && (e[(1, 1)] - cpowi(z, -k)).norm() < 1e-12);
        }
    }

    #[test]
    fn factor_scalar_inverse() {
        let t = Tolerances::default();
        let path = stabilize_and_factor(&scalar(-1, &[ONE]), &t).unwrap();
        let end = path.end().unwrap();
        assert_eq!(end.diagonal_powers(1e-12), Some(vec![0, -1]));
        assert!(path.winding_constant());
        assert_eq!(path.winding_per_stage, vec![-1]);
    }

    #[test]
    fn factor_dimerized() {
        let t = Tolerances::default();
        let path = stabilize_and_factor(&loop_from_model(&fixtures::dimerized_plus()).unwrap(), &t).unwrap();
        assert_eq!(path.end().unwrap().diagonal_powers(1e-12), Some(vec![2, -1]));
        assert_eq!(path.winding_per_stage, vec![1]);
    }

    #[test]
    fn factor_double_root() {
        let t = Tolerances::default();
        let theta = 0.9;
        let path = stabilize_and_factor(&loop_from_model(&fixtures::double_root(theta)).unwrap(), &t).unwrap();
        let end = path.end().unwrap();
        let p = scalar(0, &(0..3).map(|j| end.coefficient(j)[(0, 0)]).collect::<Vec<_>>());
        let want = [C64::from_polar(0.25, -theta), ONE, C64::from_polar(1.0, theta)];
        for (j, w) in want.iter().enumerate() {
            assert!((p.coefficients[j][(0, 0)] - w).norm() < 1e-12);
        }
        assert_eq!(p.winding().unwrap(), 2);
        assert_eq!(path.winding_per_stage, vec![1]);
    }

    #[test]
    fn split_long_range_factor() {
        let t = Tolerances::default();
        let path = stabilize_and_factor(&scalar(-3, &[ONE]), &t).unwrap();
        assert_eq!(path.stages.len(), 3);
        assert_eq!(path.end().unwrap().diagonal_powers(1e-12), Some(vec![0, -1, -1, -1]));
        assert!(path.join_defect() < 1e-12);
    }

    #[test]
    fn linearize_square() {
        let t = Tolerances::default();
        let p = scalar(0, &[ZERO, ZERO, ONE]);
        let (path, l) = linearize_path(&p, &t).unwrap();
        assert_eq!((l.size, l.highest_power()), (2, 1));
        assert_eq!(l.winding().unwrap(), 2);
        let z = C64::from_polar(1.0, 1.3);
        assert!((crate::linalg::det(&l.eval(z)).norm() - 1.0).abs() < 1e-12);
        assert!(path.winding_constant() && path.join_defect() < 1e-12);
    }

    #[test]
    fn linearize_constant_passes_through() {
        let p = scalar(0, &[c64(2.0, 1.0)]);
        let l = linearize(&p).unwrap();
        assert_eq!(l.coefficient(0), p.coefficient(0));
        assert_eq!(l.coefficient(1), CMat::zeros(1, 1));
    }

    #[test]
    fn linearize_double_root_and_project() {
        let t = Tolerances::default();
        let theta = -0.4;
        let p = scalar(0, &[C64::from_polar(0.25, -theta), ONE, C64::from_polar(1.0, theta)]);
        let l = linearize(&p).unwrap();
        assert_eq!(l.size, 2);
        assert_eq!(l.winding().unwrap(), 2);
        let (path, rank) = projectionize(&l, &t).unwrap();
        assert_eq!(rank, 2);
        assert_eq!(path.winding_per_stage, vec![2, 2]);
    }

    #[test]
    fn projection_trivial_cases() {
        let t = Tolerances::default();
        assert_eq!(projectionize(&scalar(0, &[ZERO, ONE]), &t).unwrap().1, 1);
        assert_eq!(projectionize(&scalar(0, &[ONE]), &t).unwrap().1, 0);
    }

    #[test]
    fn critical_line_rejected() {
        // C' = 1/2: 1 + (lambda - 1)/2 vanishes at lambda = -1.
        let l = scalar(0, &[c64(0.5, 0.0), c64(0.5, 0.0)]);
        assert!(matches!(projectionize(&l, &Tolerances::default()), Err(Error::SpectrumOnCriticalLine { .. }) | Err(Error::CertificateFailed { .. })));
        let c = CMat::from_element(1, 1, c64(0.5, 0.3));
        assert!(matches!(half_plane_projector(&c, &Tolerances::default()), Err(Error::SpectrumOnCriticalLine { .. })));
    }

    #[test]
    fn gl_path_reaches_target() {
        let k = CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let g = gl_path(&k).unwrap();
        assert!((g(0.0) - identity(2)).norm() < 1e-14);
        assert!((g(1.0) - &k).norm() < 1e-14);
        for i in 0..=100 {
            assert!(min_singular_value(&g(i as f64 / 100.0)) > 1e-3);
        }
    }

    #[test]
    fn full_dimerized_and_trivial() {
        let t = Tolerances::default();
        let d = full_deformation(&fixtures::dimerized_plus(), &t).unwrap();
        assert!(d.path.winding_constant());
        assert_eq!(d.counts, EndpointCounts { lambda: 2, lambda_inverse: 1, one: 0 });
        assert_eq!(d.endpoint_edge.edge_index, 1);
        assert!(d.join_defect < 1e-9, "{}", d.join_defect);
        let d = full_deformation(&fixtures::dimerized_trivial(), &t).unwrap();
        assert_eq!(d.winding, 0);
        assert_eq!(d.counts, EndpointCounts { lambda: 1, lambda_inverse: 1, one: 1 });
        assert_eq!(d.endpoint_edge.edge_index, 0);
    }

    #[test]
    fn full_double_root() {
        let t = Tolerances::default();
        let d = full_deformation(&fixtures::double_root(0.0), &t).unwrap();
        assert!(d.path.winding_per_stage.iter().all(|&w| w == 1));
        assert!(d.path.min_certificate() > 0.0);
        assert_eq!((d.counts.lambda, d.counts.lambda_inverse), (2, 1));
        assert_eq!(d.endpoint_edge.edge_index, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn random_deformations_preserve_winding(seed in any::<u64>(), r in 1usize..=2) {
            let t = Tolerances::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_chiral_model(&mut rng, 2, r, 1.0, false);
            prop_assume!(require_chiral_gap(&cm).is_ok_and(|g| g.sampled_margin > 0.1));
            let d = full_deformation(&cm, &t).unwrap();
            prop_assert!(d.path.winding_constant());
            prop_assert_eq!(d.counts.lambda as i64, d.winding + r as i64);
            prop_assert_eq!(d.counts.lambda_inverse, r);
            prop_assert_eq!(d.endpoint_edge.edge_index, d.winding);
            prop_assert!(d.join_defect < 1e-8);
        }
    }
}
