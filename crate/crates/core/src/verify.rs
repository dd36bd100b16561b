//! Named checks of the bulk-edge correspondence on single models, fixtures
//! and seeded ensembles. A check passes or fails only when its hypotheses
//! hold; otherwise it is skipped with the reason.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{ensemble_members, random_chiral_model};
pub use crate::ensemble::{random_chiral_ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::linalg::c64;
use crate::halfspace::{edge_modes_companion, edge_modes_truncated, graded_split, in_gap_scan, EdgeMethod, EdgeReport, InGapState, Side};
use crate::model::ChiralModel;
use crate::spectrum::{certify_gap, chiral_gap_margin, require_chiral_gap, ChiralGap};
use crate::tol::{Tolerances, DEFAULT_NUM_K};
use crate::winding::{bulk_winding, WindingResult};

/// Truncation used by the in-gap exclusion check unless overridden.
pub const DEFAULT_SCAN_CELLS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub status: Status,
    pub detail: String,
}

impl Check {
    fn from_bool(ok: bool, detail: String) -> Self {
        Check { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }

    fn skip(reason: &str) -> Self {
        Check { status: Status::Skip, detail: reason.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationCase {
    pub label: String,
    pub dim_v: usize,
    pub range: usize,
    pub gap: ChiralGap,
    pub winding: WindingResult,
    pub edge: EdgeReport,
    /// Truncated-route kernel dimensions, kept even when the companion route
    /// also ran, so the two can be compared.
    pub truncated_dims: (usize, usize),
    pub companion_dims: Option<(usize, usize)>,
    pub in_gap: Option<Vec<InGapState>>,
    pub checks: BTreeMap<String, Check>,
}

impl VerificationCase {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|c| c.status != Status::Fail)
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.checks.get(name).map(|c| c.status)
    }
}

/// Winding, both edge routes, and the equality and inequality checks.
pub fn verify_bec(label: &str, cm: &ChiralModel, tol: &Tolerances) -> Result<VerificationCase> {
    cm.require_balanced()?;
    let gap = require_chiral_gap(cm)?;
    let winding = bulk_winding(cm, tol)?;
    let w = winding.winding;
    let trunc = edge_modes_truncated(cm, 0.0, None, tol)?;
    let trunc_dims = (trunc.dim_ker_pm, trunc.dim_ker_mp);
    let mut checks = BTreeMap::new();
    let comp = match edge_modes_companion(cm, tol) {
        Ok(c) => Some(c),
        Err(Error::SingularLeadingHop { condition }) => {
            let reason = format!("leading hop singular (condition {condition:.3e}); companion route unavailable");
            checks.insert("routes_agree".into(), Check::skip(&reason));
            checks.insert("sandwich".into(), Check::skip(&reason));
            None
        }
        Err(e) => return Err(e),
    };
    let mut edge = trunc;
    if let Some(c) = &comp {
        let dims = (c.dim_ker_pm, c.dim_ker_mp);
        checks.insert(
            "routes_agree".into(),
            Check::from_bool(dims == trunc_dims, format!("companion {dims:?}, truncated {trunc_dims:?}")),
        );
        let (ip, im) = c.decreasing_dims.expect("companion route reports sector dimensions");
        let (kp, km) = trunc_dims;
        let ok = (w.max(0) as usize) <= kp && kp <= ip && ((-w).max(0) as usize) <= km && km <= im;
        checks.insert(
            "sandwich".into(),
            Check::from_bool(ok, format!("max(0,W)={} <= {kp} <= |I+|={ip}; max(0,-W)={} <= {km} <= |I-|={im}", w.max(0), (-w).max(0))),
        );
        if dims == trunc_dims {
            edge.method = EdgeMethod::Both;
            edge.decreasing_dims = c.decreasing_dims;
            edge.decay_ratio = c.decay_ratio;
        }
    }
    let mut detail = format!("W={w}, truncated index {}", edge.edge_index);
    let mut ok = edge.edge_index == w;
    if let Some(c) = &comp {
        detail.push_str(&format!(", companion index {}", c.edge_index));
        ok &= c.edge_index == w;
    }
    checks.insert("bec_equality".into(), Check::from_bool(ok, detail));
    Ok(VerificationCase {
        label: label.to_string(),
        dim_v: cm.base.dim_v,
        range: cm.range(),
        gap,
        winding,
        edge,
        truncated_dims: trunc_dims,
        companion_dims: comp.map(|c| (c.dim_ker_pm, c.dim_ker_mp)),
        in_gap: None,
        checks,
    })
}

/// Two-band strong form: `|W| <= R`, kernel dimensions `(max(0, W),
/// max(0, -W))`, and at most one nonzero kernel.
pub fn two_band_checks(case: &mut VerificationCase) {
    let names = ["winding_bound", "kernel_pm", "kernel_mp", "coburn"];
    if case.dim_v != 2 {
        for n in names {
            case.checks.insert(n.into(), Check::skip("needs two bands"));
        }
        return;
    }
    let w = case.winding.winding;
    let r = case.range as i64;
    let (kp, km) = case.truncated_dims;
    case.checks.insert("winding_bound".into(), Check::from_bool(w.abs() <= r, format!("|W|={} <= R={r}", w.abs())));
    case.checks.insert("kernel_pm".into(), Check::from_bool(kp as i64 == w.max(0), format!("dim ker H+- = {kp}, max(0,W) = {}", w.max(0))));
    case.checks.insert("kernel_mp".into(), Check::from_bool(km as i64 == (-w).max(0), format!("dim ker H-+ = {km}, max(0,-W) = {}", (-w).max(0))));
    case.checks.insert("coburn".into(), Check::from_bool(kp == 0 || km == 0, format!("kernel dimensions ({kp}, {km})")));
}

pub fn verify_two_band_strong(label: &str, cm: &ChiralModel, tol: &Tolerances) -> Result<VerificationCase> {
    let mut case = verify_bec(label, cm, tol)?;
    two_band_checks(&mut case);
    Ok(case)
}

/// Zero-splitting scale for a truncation of `cells`: `10 q^N` with `q` the
/// slowest companion decay, floored at roundoff; `1e-7` without companion data.
pub fn zero_threshold(cm: &ChiralModel, cells: usize, tol: &Tolerances) -> f64 {
    let scale = cm.base.coefficient_scale().max(1.0);
    match graded_split(cm, tol) {
        Ok(s) => {
            let q = s.plus.decay_ratio().into_iter().chain(s.minus.decay_ratio()).fold(0.0, f64::max);
            (10.0 * q.powi(cells as i32)).max(1e-12 * scale)
        }
        Err(_) => 1e-7,
    }
}

/// In-gap spectrum of the truncation over the gap shrunk by `5%` of its
/// width on each side; every left-localized eigenvalue must be a split zero.
pub fn gap_exclusion_check(case: &mut VerificationCase, cm: &ChiralModel, cells: usize, tol: &Tolerances) -> Result<()> {
    if cm.range() != 1 || cm.base.dim_v != 2 {
        case.checks.insert("gap_exclusion".into(), Check::skip("needs nearest-neighbour hopping and two bands"));
        return Ok(());
    }
    let (bands, gap) = certify_gap(&cm.base, Some(0.0), DEFAULT_NUM_K)?;
    if !gap.gapped {
        return Err(Error::GapNotCertified { margin: gap.certificate_margin });
    }
    let width = gap.e_plus - gap.e_minus;
    let pad = (0.05 * width).max(1.001 * bands.allowance());
    let window = (gap.e_minus + pad, gap.e_plus - pad);
    if window.0 >= window.1 {
        return Err(Error::GapNotCertified { margin: gap.certificate_margin });
    }
    let states = in_gap_scan(&cm.base, cells, window)?;
    let eps = zero_threshold(cm, cells, tol);
    let left: Vec<f64> = states.iter().filter(|s| s.side == Side::Left).map(|s| s.energy).collect();
    let worst = left.iter().map(|e| e.abs()).fold(0.0, f64::max);
    case.checks.insert(
        "gap_exclusion".into(),
        Check::from_bool(worst < eps, format!("{} left states in ({:.4}, {:.4}) at N={cells}, max |E| = {worst:.3e}, threshold {eps:.3e}", left.len(), window.0, window.1)),
    );
    case.in_gap = Some(states);
    Ok(())
}

pub fn verify_gap_exclusion(label: &str, cm: &ChiralModel, cells: usize, tol: &Tolerances) -> Result<VerificationCase> {
    let mut case = verify_bec(label, cm, tol)?;
    gap_exclusion_check(&mut case, cm, cells, tol)?;
    Ok(case)
}

/// Every applicable check on one model.
pub fn verify_all(label: &str, cm: &ChiralModel, cells: usize, tol: &Tolerances) -> Result<VerificationCase> {
    let mut case = verify_bec(label, cm, tol)?;
    two_band_checks(&mut case);
    gap_exclusion_check(&mut case, cm, cells, tol)?;
    Ok(case)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberSummary {
    pub index: usize,
    pub singular: bool,
    pub draws: usize,
    pub winding: Option<i64>,
    pub edge_index: Option<i64>,
    pub kernel_dims: Option<(usize, usize)>,
    pub companion_dims: Option<(usize, usize)>,
    pub passed: bool,
    pub failed_checks: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub spec: EnsembleSpec,
    pub members: Vec<MemberSummary>,
    pub passed: usize,
    pub failed: usize,
    /// Counts per check name: `[pass, fail, skip]`.
    pub check_counts: BTreeMap<String, [usize; 3]>,
}

impl EnsembleReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Verifies every member of a seeded ensemble. Members run in parallel;
/// the report is ordered by member index.
pub fn verify_ensemble(spec: &EnsembleSpec, cells: usize, tol: &Tolerances) -> Result<EnsembleReport> {
    let members = ensemble_members(spec)?;
    let summaries: Vec<(MemberSummary, Option<VerificationCase>)> = members
        .par_iter()
        .map(|m| {
            let res = verify_all(&format!("member {}", m.index), &m.model, cells, tol);
            let mut s = MemberSummary {
                index: m.index,
                singular: m.singular,
                draws: m.draws,
                winding: None,
                edge_index: None,
                kernel_dims: None,
                companion_dims: None,
                passed: false,
                failed_checks: Vec::new(),
                error: None,
            };
            match res {
                Ok(case) => {
                    s.winding = Some(case.winding.winding);
                    s.edge_index = Some(case.edge.edge_index);
                    s.kernel_dims = Some(case.truncated_dims);
                    s.companion_dims = case.companion_dims;
                    s.passed = case.passed();
                    s.failed_checks = case.checks.iter().filter(|(_, c)| c.status == Status::Fail).map(|(n, _)| n.clone()).collect();
                    (s, Some(case))
                }
                Err(e) => {
                    s.error = Some(e.to_string());
                    (s, None)
                }
            }
        })
        .collect();
    let mut check_counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for case in summaries.iter().filter_map(|(_, c)| c.as_ref()) {
        for (name, c) in &case.checks {
            let slot = match c.status {
                Status::Pass => 0,
                Status::Fail => 1,
                Status::Skip => 2,
            };
            check_counts.entry(name.clone()).or_default()[slot] += 1;
        }
    }
    let members: Vec<MemberSummary> = summaries.into_iter().map(|(s, _)| s).collect();
    let passed = members.iter().filter(|m| m.passed).count();
    Ok(EnsembleReport { spec: spec.clone(), failed: members.len() - passed, passed, members, check_counts })
}

/// Perturbs `cm` by `eta` times a random chiral direction, with `eta`
/// halved until the sampled chiral gap stays above half its original value.
pub fn perturb_within_gap(cm: &ChiralModel, seed: u64, tol: &Tolerances) -> Result<ChiralModel> {
    let margin = chiral_gap_margin(cm, DEFAULT_NUM_K)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random_chiral_model(&mut rng, cm.base.dim_v, cm.range(), 1.0, false);
    let size = dir.base.coefficient_scale().max(f64::MIN_POSITIVE);
    let mut eta = margin / (4.0 * size * (2 * cm.range() + 1) as f64);
    for _ in 0..40 {
        let e = c64(eta, 0.0);
        let v = &cm.v_block + &dir.v_block * e;
        let a_pm = cm.a_pm.iter().zip(&dir.a_pm).map(|(a, b)| a + b * e).collect();
        let a_mp = cm.a_mp.iter().zip(&dir.a_mp).map(|(a, b)| a + b * e).collect();
        let p = ChiralModel::from_blocks(v, a_pm, a_mp, tol)?;
        if chiral_gap_margin(&p, DEFAULT_NUM_K)? >= 0.5 * margin {
            return Ok(p);
        }
        eta *= 0.5;
    }
    Err(Error::NonConvergent("no perturbation keeps half the gap".into()))
}
