//! Seeded random model generators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, C64};
use crate::model::{ChiralModel, ModelParams};
use crate::spectrum::{chiral_gap_certificate, chiral_gap_margin};
use crate::tol::{Tolerances, DEFAULT_NUM_K};

/// Probability that a member gets a zeroed last column in `a_{R,+-}`.
pub const SINGULAR_PROBABILITY: f64 = 0.2;
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub seed: u64,
    pub count: usize,
    pub dim_v: usize,
    pub range: usize,
    pub coefficient_scale: f64,
    pub gap_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub index: usize,
    pub model: ChiralModel,
    /// `a_{R,+-}` was deliberately made singular.
    pub singular: bool,
    pub draws: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im) * (scale / std::f64::consts::SQRT_2)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    // Fill row by row so the draw order does not depend on storage layout.
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = gaussian(rng, scale);
        }
    }
    m
}

/// Balanced chiral model with complex Gaussian blocks.
pub fn random_chiral_model(rng: &mut ChaCha8Rng, dim_v: usize, range: usize, scale: f64, singular: bool) -> ChiralModel {
    let h = dim_v / 2;
    let v = random_matrix(rng, h, h, scale);
    let mut a_pm = Vec::with_capacity(range);
    let mut a_mp = Vec::with_capacity(range);
    for _ in 0..range {
        a_pm.push(random_matrix(rng, h, h, scale));
        a_mp.push(random_matrix(rng, h, h, scale));
    }
    if singular {
        let last = a_pm.last_mut().expect("range >= 1");
        last.column_mut(h - 1).fill(c64(0.0, 0.0));
    }
    ChiralModel::from_blocks(v, a_pm, a_mp, &Tolerances::default()).expect("blocks are chiral by construction")
}

/// Self-adjoint model with Hermitian `V` and Gaussian hops.
pub fn random_self_adjoint_model(rng: &mut ChaCha8Rng, dim_v: usize, range: usize, scale: f64) -> ModelParams {
    let g = random_matrix(rng, dim_v, dim_v, scale);
    let v = (&g + g.adjoint()) * c64(0.5, 0.0);
    let hops = (0..range).map(|_| random_matrix(rng, dim_v, dim_v, scale)).collect();
    ModelParams::hermitian(v, hops, &Tolerances::default()).expect("Hermitian by construction")
}

fn validate(spec: &EnsembleSpec) -> Result<()> {
    if spec.dim_v < 2 || spec.dim_v % 2 != 0 {
        return Err(Error::InvalidArgument(format!("ensemble dim_v must be even and positive, got {}", spec.dim_v)));
    }
    if spec.range < 1 {
        return Err(Error::RangeZero);
    }
    if !(spec.coefficient_scale.is_finite() && spec.coefficient_scale > 0.0) {
        return Err(Error::InvalidArgument("coefficient_scale must be positive".into()));
    }
    if !(spec.gap_floor.is_finite() && spec.gap_floor >= 0.0) {
        return Err(Error::InvalidArgument("gap_floor must be nonnegative".into()));
    }
    Ok(())
}

/// Reproducible gapped chiral models. Each slot draws its singular flag once,
/// then redraws blocks until the sampled margin reaches `gap_floor` and the
/// gap is certified.
pub fn ensemble_members(spec: &EnsembleSpec) -> Result<Vec<EnsembleMember>> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let singular = rng.random_bool(SINGULAR_PROBABILITY);
        let mut accepted = None;
        for draws in 1..=MAX_REDRAWS {
            let model = random_chiral_model(&mut rng, spec.dim_v, spec.range, spec.coefficient_scale, singular);
            if chiral_gap_margin(&model, DEFAULT_NUM_K)? < spec.gap_floor {
                continue;
            }
            if chiral_gap_certificate(&model, DEFAULT_NUM_K)?.certified() {
                accepted = Some(EnsembleMember { index, model, singular, draws });
                break;
            }
        }
        out.push(accepted.ok_or(Error::ExhaustedRedraws { tries: MAX_REDRAWS })?);
    }
    Ok(out)
}

pub fn random_chiral_ensemble(spec: &EnsembleSpec) -> Result<Vec<ChiralModel>> {
    Ok(ensemble_members(spec)?.into_iter().map(|m| m.model).collect())
}
