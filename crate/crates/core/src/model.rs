//! Bulk lattice Hamiltonians and their chiral refinement.
//!
//! A model acts on sequences `psi_n` in `C^{d_V}` by
//! `(H psi)_n = V psi_n + sum_r (B_r psi_{n-r} + A_r psi_{n+r})`, and its
//! Bloch Hamiltonian at `lambda != 0` is
//! `H(lambda) = V + sum_r (lambda^{-r} B_r + lambda^r A_r)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cpowi, identity, op_norm, submatrix, CMat, C64, ZERO};
use crate::tol::Tolerances;

/// Full bulk data of a finite-range lattice Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim_v: usize,
    pub range: usize,
    /// `V`
    pub on_site: CMat,
    /// `B_r`, multiplying `psi_{n-r}`; index `r - 1`.
    pub left_hops: Vec<CMat>,
    /// `A_r`, multiplying `psi_{n+r}`; index `r - 1`.
    pub right_hops: Vec<CMat>,
    pub self_adjoint: bool,
}

pub fn build_model(
    dim_v: usize,
    range: usize,
    on_site: CMat,
    left_hops: Vec<CMat>,
    right_hops: Vec<CMat>,
    tol: &Tolerances,
) -> Result<ModelParams> {
    if range < 1 {
        return Err(Error::RangeZero);
    }
    if dim_v < 1 {
        return Err(Error::ShapeMismatch("cell dimension must be positive".into()));
    }
    if left_hops.len() != range || right_hops.len() != range {
        return Err(Error::ShapeMismatch(format!(
            "expected {range} left and right hops, got {} and {}",
            left_hops.len(),
            right_hops.len()
        )));
    }
    let square = |m: &CMat, what: &str| -> Result<()> {
        if m.nrows() != dim_v || m.ncols() != dim_v {
            return Err(Error::ShapeMismatch(format!(
                "{what} is {}x{}, expected {dim_v}x{dim_v}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    };
    square(&on_site, "on_site")?;
    for (r, (b, a)) in left_hops.iter().zip(&right_hops).enumerate() {
        square(b, &format!("left_hops[{r}]"))?;
        square(a, &format!("right_hops[{r}]"))?;
    }

    let mut model = ModelParams { dim_v, range, on_site, left_hops, right_hops, self_adjoint: false };
    let scale = model.coefficient_scale();
    model.self_adjoint = model.adjoint_deviation() <= tol.sa * scale;
    Ok(model)
}

impl ModelParams {
    /// Self-adjoint model with `B_r = A_r*`.
    pub fn hermitian(on_site: CMat, right_hops: Vec<CMat>, tol: &Tolerances) -> Result<Self> {
        let dim_v = on_site.nrows();
        let range = right_hops.len();
        let left = right_hops.iter().map(|a| a.adjoint()).collect();
        build_model(dim_v, range, on_site, left, right_hops, tol)
    }

    /// Largest operator norm among the coefficient matrices.
    pub fn coefficient_scale(&self) -> f64 {
        std::iter::once(&self.on_site)
            .chain(&self.left_hops)
            .chain(&self.right_hops)
            .map(op_norm)
            .fold(0.0, f64::max)
    }

    fn adjoint_deviation(&self) -> f64 {
        let mut dev = op_norm(&(&self.on_site - self.on_site.adjoint()));
        for (b, a) in self.left_hops.iter().zip(&self.right_hops) {
            dev = dev.max(op_norm(&(b - a.adjoint())));
        }
        dev
    }

    pub fn leading_hop(&self) -> &CMat {
        &self.right_hops[self.range - 1]
    }

    pub fn trailing_hop(&self) -> &CMat {
        &self.left_hops[self.range - 1]
    }

    /// `H(lambda)` without the zero check.
    pub fn hamiltonian(&self, lambda: C64) -> CMat {
        let mut h = self.on_site.clone();
        for r in 1..=self.range {
            h += &self.left_hops[r - 1] * cpowi(lambda, -(r as i64));
            h += &self.right_hops[r - 1] * cpowi(lambda, r as i64);
        }
        h
    }

    /// Lipschitz constant of `k -> H(e^{ik})` in operator norm.
    pub fn lipschitz_bound(&self) -> f64 {
        (1..=self.range)
            .map(|r| r as f64 * (op_norm(&self.right_hops[r - 1]) + op_norm(&self.left_hops[r - 1])))
            .sum()
    }
}

/// Bloch Hamiltonian evaluated at one momentum parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochSample {
    pub lambda: C64,
    pub matrix: CMat,
    /// `h_{+-}(lambda)`, the block mapping `V_+` to `V_-`.
    pub h_pm: Option<CMat>,
    /// `h_{-+}(lambda)`, the block mapping `V_-` to `V_+`.
    pub h_mp: Option<CMat>,
}

pub fn bloch_at(model: &ModelParams, lambda: C64) -> Result<BlochSample> {
    if lambda == ZERO {
        return Err(Error::ZeroMomentum);
    }
    Ok(BlochSample { lambda, matrix: model.hamiltonian(lambda), h_pm: None, h_mp: None })
}

/// A self-adjoint model together with a grading `Gamma` it anticommutes with.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiralModel {
    pub base: ModelParams,
    /// `+1` / `-1` per basis index.
    pub grading: Vec<i8>,
    pub plus_idx: Vec<usize>,
    pub minus_idx: Vec<usize>,
    pub dim_plus: usize,
    pub dim_minus: usize,
    /// `v : V_+ -> V_-`
    pub v_block: CMat,
    /// `a_{r,+-} : V_+ -> V_-`
    pub a_pm: Vec<CMat>,
    /// `a_{r,-+} : V_- -> V_+`
    pub a_mp: Vec<CMat>,
}

fn grading_indices(grading: &[i8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (i, &g) in grading.iter().enumerate() {
        match g {
            1 => plus.push(i),
            -1 => minus.push(i),
            other => {
                return Err(Error::InvalidGrading(format!("entry {i} is {other}, expected +1 or -1")))
            }
        }
    }
    if plus.is_empty() || minus.is_empty() {
        return Err(Error::InvalidGrading("both graded components must be nonempty".into()));
    }
    Ok((plus, minus))
}

pub fn chiral_split(model: &ModelParams, grading: &[i8], tol: &Tolerances) -> Result<ChiralModel> {
    if !model.self_adjoint {
        return Err(Error::NotSelfAdjoint);
    }
    if grading.len() != model.dim_v {
        return Err(Error::InvalidGrading(format!(
            "length {} does not match cell dimension {}",
            grading.len(),
            model.dim_v
        )));
    }
    let (plus, minus) = grading_indices(grading)?;
    let diag_dev = |m: &CMat| op_norm(&submatrix(m, &plus, &plus)).max(op_norm(&submatrix(m, &minus, &minus)));
    let mut dev = diag_dev(&model.on_site);
    for a in &model.right_hops {
        dev = dev.max(diag_dev(a));
    }
    if dev > tol.sa * model.coefficient_scale() {
        return Err(Error::NotChiral { deviation: dev });
    }
    Ok(ChiralModel {
        base: model.clone(),
        grading: grading.to_vec(),
        dim_plus: plus.len(),
        dim_minus: minus.len(),
        v_block: submatrix(&model.on_site, &minus, &plus),
        a_pm: model.right_hops.iter().map(|a| submatrix(a, &minus, &plus)).collect(),
        a_mp: model.right_hops.iter().map(|a| submatrix(a, &plus, &minus)).collect(),
        plus_idx: plus,
        minus_idx: minus,
    })
}

impl ChiralModel {
    /// Assemble from blocks in the standard ordering (all `+` indices first).
    pub fn from_blocks(v_block: CMat, a_pm: Vec<CMat>, a_mp: Vec<CMat>, tol: &Tolerances) -> Result<Self> {
        let (dm, dp) = v_block.shape();
        if a_pm.len() != a_mp.len() || a_pm.is_empty() {
            return Err(Error::RangeZero);
        }
        for (a, b) in a_pm.iter().zip(&a_mp) {
            if a.shape() != (dm, dp) || b.shape() != (dp, dm) {
                return Err(Error::ShapeMismatch("hop block shapes disagree with v".into()));
            }
        }
        let grading: Vec<i8> = std::iter::repeat_n(1, dp).chain(std::iter::repeat_n(-1, dm)).collect();
        let assemble = |upper: &CMat, lower: &CMat| {
            let mut m = CMat::zeros(dp + dm, dp + dm);
            m.view_mut((0, dp), (dp, dm)).copy_from(upper);
            m.view_mut((dp, 0), (dm, dp)).copy_from(lower);
            m
        };
        let on_site = assemble(&v_block.adjoint(), &v_block);
        let hops = a_pm.iter().zip(&a_mp).map(|(pm, mp)| assemble(mp, pm)).collect();
        let base = ModelParams::hermitian(on_site, hops, tol)?;
        chiral_split(&base, &grading, tol)
    }

    pub fn range(&self) -> usize {
        self.base.range
    }

    pub fn is_balanced(&self) -> bool {
        self.dim_plus == self.dim_minus
    }

    pub fn require_balanced(&self) -> Result<()> {
        if self.is_balanced() {
            Ok(())
        } else {
            Err(Error::UnbalancedGrading { plus: self.dim_plus, minus: self.dim_minus })
        }
    }

    /// `d_V / 2` for balanced models.
    pub fn half_dim(&self) -> usize {
        self.dim_plus
    }

    pub fn gamma(&self) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            self.grading.len(),
            self.grading.iter().map(|&g| C64::new(g as f64, 0.0)),
        ))
    }

    pub fn h_pm(&self, lambda: C64) -> CMat {
        let mut h = self.v_block.clone();
        for r in 1..=self.range() {
            h += self.a_mp[r - 1].adjoint() * cpowi(lambda, -(r as i64));
            h += &self.a_pm[r - 1] * cpowi(lambda, r as i64);
        }
        h
    }

    pub fn h_mp(&self, lambda: C64) -> CMat {
        let mut h = self.v_block.adjoint();
        for r in 1..=self.range() {
            h += self.a_pm[r - 1].adjoint() * cpowi(lambda, -(r as i64));
            h += &self.a_mp[r - 1] * cpowi(lambda, r as i64);
        }
        h
    }

    /// Laurent coefficients of `h_{+-}`: entry `j` multiplies `lambda^{j - R}`.
    pub fn h_pm_coefficients(&self) -> Vec<CMat> {
        let r_max = self.range();
        let mut out = Vec::with_capacity(2 * r_max + 1);
        for r in (1..=r_max).rev() {
            out.push(self.a_mp[r - 1].adjoint());
        }
        out.push(self.v_block.clone());
        for r in 1..=r_max {
            out.push(self.a_pm[r - 1].clone());
        }
        out
    }

    pub fn bloch_at(&self, lambda: C64) -> Result<BlochSample> {
        let mut s = bloch_at(&self.base, lambda)?;
        s.h_pm = Some(self.h_pm(lambda));
        s.h_mp = Some(self.h_mp(lambda));
        Ok(s)
    }

    /// Rebuild `V` and `A_r` from the blocks in the original basis.
    pub fn reassemble(&self) -> (CMat, Vec<CMat>) {
        let d = self.base.dim_v;
        let place = |upper: &CMat, lower: &CMat| {
            let mut m = CMat::zeros(d, d);
            for (i, &p) in self.plus_idx.iter().enumerate() {
                for (j, &q) in self.minus_idx.iter().enumerate() {
                    m[(p, q)] = upper[(i, j)];
                    m[(q, p)] = lower[(j, i)];
                }
            }
            m
        };
        let v = place(&self.v_block.adjoint(), &self.v_block);
        let hops = self.a_pm.iter().zip(&self.a_mp).map(|(pm, mp)| place(mp, pm)).collect();
        (v, hops)
    }

    /// Same bulk operator with the roles of `V_+` and `V_-` exchanged.
    pub fn swapped(&self, tol: &Tolerances) -> Result<ChiralModel> {
        let g: Vec<i8> = self.grading.iter().map(|&x| -x).collect();
        chiral_split(&self.base, &g, tol)
    }

    /// Summary used in reports.
    pub fn describe(&self) -> ModelSummary {
        ModelSummary {
            dim_v: self.base.dim_v,
            range: self.base.range,
            dim_plus: self.dim_plus,
            dim_minus: self.dim_minus,
            leading_hop_condition: crate::linalg::condition_number(self.base.leading_hop()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub dim_v: usize,
    pub range: usize,
    pub dim_plus: usize,
    pub dim_minus: usize,
    pub leading_hop_condition: f64,
}

/// Two-coloring of the hopping graph (nonzero pattern of `V` and all hops).
///
/// Returns `None` when the graph is not bipartite (so no grading exists that
/// makes every coefficient off-diagonal). Independent components are flipped
/// to balance the two sides as far as possible.
pub fn detect_grading(model: &ModelParams, tol: &Tolerances) -> Option<Vec<i8>> {
    let d = model.dim_v;
    let cutoff = tol.sa * model.coefficient_scale().max(f64::MIN_POSITIVE);
    let mut adj = vec![Vec::new(); d];
    for m in std::iter::once(&model.on_site).chain(&model.right_hops).chain(&model.left_hops) {
        for i in 0..d {
            for j in 0..d {
                if m[(i, j)].norm() > cutoff {
                    if i == j {
                        return None;
                    }
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
    }
    let mut color = vec![0i8; d];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..d {
        if color[start] != 0 {
            continue;
        }
        color[start] = 1;
        let mut comp = vec![start];
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if color[w] == 0 {
                    color[w] = -color[u];
                    comp.push(w);
                    queue.push_back(w);
                } else if color[w] == color[u] {
                    return None;
                }
            }
        }
        components.push(comp);
    }
    let mut balance: i64 = 0;
    for comp in &components {
        let s: i64 = comp.iter().map(|&i| color[i] as i64).sum();
        if (balance + s).abs() > (balance - s).abs() {
            for &i in comp {
                color[i] = -color[i];
            }
            balance -= s;
        } else {
            balance += s;
        }
    }
    Some(color)
}

/// `lambda^k` times the identity of size `n`.
pub fn scalar_loop_value(lambda: C64, k: i64, n: usize) -> CMat {
    identity(n) * cpowi(lambda, k)
}
