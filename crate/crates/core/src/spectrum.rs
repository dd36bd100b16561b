//! Band structure on the Brillouin zone and certified gap detection.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, min_singular_value, op_norm, C64};
use crate::model::{ChiralModel, ModelParams};
use crate::tol::{DEFAULT_NUM_K, MAX_NUM_K};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSample {
    pub k: f64,
    /// Ascending.
    pub energies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStructure {
    pub samples: Vec<BandSample>,
    /// Lipschitz constant of `k -> H(e^{ik})` in operator norm, which bounds
    /// the slope of every band function.
    pub lipschitz_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub gapped: bool,
    /// Gap lies between bands `gap_index` and `gap_index + 1` (zero based).
    pub gap_index: Option<usize>,
    /// Largest sampled value of the lower band.
    pub e_minus: f64,
    /// Smallest sampled value of the upper band.
    pub e_plus: f64,
    /// Sampled gap width minus the Lipschitz sampling allowance; positive
    /// exactly when the gap is certified.
    pub certificate_margin: f64,
    pub num_k: usize,
}

/// `k_i = -pi + 2 pi i / n`.
pub fn k_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| -PI + 2.0 * PI * i as f64 / n as f64)
}

pub fn band_structure(model: &ModelParams, num_k: usize) -> Result<BandStructure> {
    if !model.self_adjoint {
        return Err(Error::NotSelfAdjoint);
    }
    if num_k < 8 {
        return Err(Error::InvalidArgument(format!("num_k must be at least 8, got {num_k}")));
    }
    let samples = k_grid(num_k)
        .map(|k| BandSample { k, energies: hermitian_eigenvalues(&model.hamiltonian(C64::from_polar(1.0, k))) })
        .collect();
    Ok(BandStructure { samples, lipschitz_bound: model.lipschitz_bound() })
}

impl BandStructure {
    pub fn num_k(&self) -> usize {
        self.samples.len()
    }

    fn band_extrema(&self, j: usize) -> (f64, f64) {
        self.samples.iter().map(|s| s.energies[j]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e), hi.max(e))
        })
    }

    /// Sampling allowance `L * dk / 2`.
    pub fn allowance(&self) -> f64 {
        self.lipschitz_bound * PI / self.num_k() as f64
    }
}

pub fn detect_gap(bands: &BandStructure, around_energy: Option<f64>) -> GapReport {
    let n_bands = bands.samples.first().map_or(0, |s| s.energies.len());
    let slack = bands.allowance();
    let mut best: Option<GapReport> = None;
    let mut fallback: Option<GapReport> = None;
    for j in 0..n_bands.saturating_sub(1) {
        let (_, top) = bands.band_extrema(j);
        let (bottom, _) = bands.band_extrema(j + 1);
        let margin = (bottom - top) - 2.0 * slack;
        let report = GapReport {
            gapped: margin > 0.0,
            gap_index: Some(j),
            e_minus: top,
            e_plus: bottom,
            certificate_margin: margin,
            num_k: bands.num_k(),
        };
        let contains = match around_energy {
            Some(e) => top + slack < e && e < bottom - slack,
            None => true,
        };
        let near = match around_energy {
            Some(e) => top <= e && e <= bottom,
            None => true,
        };
        if report.gapped && contains {
            if best.as_ref().is_none_or(|b| margin > b.certificate_margin) {
                best = Some(report);
            }
        } else if near && fallback.as_ref().is_none_or(|b| margin > b.certificate_margin) {
            fallback = Some(GapReport { gapped: false, ..report });
        }
    }
    best.or(fallback).unwrap_or(GapReport {
        gapped: false,
        gap_index: None,
        e_minus: f64::NAN,
        e_plus: f64::NAN,
        certificate_margin: f64::NEG_INFINITY,
        num_k: bands.num_k(),
    })
}

/// Gap detection with adaptive doubling of the k grid. Refinement stops at
/// the first certified verdict, when no sampled gap exists at all, or at
/// [`MAX_NUM_K`].
pub fn certify_gap(model: &ModelParams, around_energy: Option<f64>, num_k: usize) -> Result<(BandStructure, GapReport)> {
    let mut n = num_k;
    loop {
        let bands = band_structure(model, n)?;
        let report = detect_gap(&bands, around_energy);
        let sampled_open = report.gap_index.is_some() && report.e_minus < report.e_plus;
        if report.gapped || !sampled_open || 2 * n > MAX_NUM_K {
            return Ok((bands, report));
        }
        n *= 2;
    }
}

/// `min_k sigma_min(h_{+-}(e^{ik}))` over `num_k` samples.
pub fn chiral_gap_margin(cm: &ChiralModel, num_k: usize) -> Result<f64> {
    cm.require_balanced()?;
    if num_k < 1 {
        return Err(Error::InvalidArgument("num_k must be positive".into()));
    }
    Ok(k_grid(num_k).map(|k| min_singular_value(&cm.h_pm(C64::from_polar(1.0, k)))).fold(f64::INFINITY, f64::min))
}

/// Lipschitz constant of `k -> h_{+-}(e^{ik})`.
pub fn chiral_lipschitz_bound(cm: &ChiralModel) -> f64 {
    (1..=cm.range())
        .map(|r| r as f64 * (op_norm(&cm.a_pm[r - 1]) + op_norm(&cm.a_mp[r - 1])))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiralGap {
    pub sampled_margin: f64,
    /// Lower bound for `min sigma_min` over the whole circle.
    pub certified_margin: f64,
    pub num_k: usize,
}

impl ChiralGap {
    pub fn certified(&self) -> bool {
        self.certified_margin > 0.0
    }
}

/// Certified lower bound on `sigma_min(h_{+-})` over the unit circle, with
/// adaptive doubling of the grid from `num_k` up to [`MAX_NUM_K`].
pub fn chiral_gap_certificate(cm: &ChiralModel, num_k: usize) -> Result<ChiralGap> {
    cm.require_balanced()?;
    let lip = chiral_lipschitz_bound(cm);
    let mut n = num_k.max(8);
    loop {
        let sampled = chiral_gap_margin(cm, n)?;
        let certified = sampled - lip * PI / n as f64;
        if certified > 0.0 || sampled <= 0.0 || 2 * n > MAX_NUM_K {
            return Ok(ChiralGap { sampled_margin: sampled, certified_margin: certified, num_k: n });
        }
        n *= 2;
    }
}

/// Require a certified chiral gap at zero energy.
pub fn require_chiral_gap(cm: &ChiralModel) -> Result<ChiralGap> {
    let g = chiral_gap_certificate(cm, DEFAULT_NUM_K)?;
    if g.certified() {
        Ok(g)
    } else {
        Err(Error::GapNotCertified { margin: g.certified_margin })
    }
}
