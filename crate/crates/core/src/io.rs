//! JSON model documents. Complex numbers are `[re, im]` pairs, matrices are
//! lists of rows, and `left_hops` defaults to the adjoints of `right_hops`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, CVec};
use crate::model::{build_model, chiral_split, detect_grading, ChiralModel, ModelParams};
use crate::tol::Tolerances;

pub type ComplexPair = [f64; 2];
pub type MatrixDoc = Vec<Vec<ComplexPair>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub dim_v: usize,
    pub range: usize,
    pub on_site: MatrixDoc,
    pub right_hops: Vec<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_hops: Option<Vec<MatrixDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<Vec<i8>>,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse(format!("line {} column {}: {e}", e.line(), e.column()))
}

pub fn matrix_from_doc(doc: &MatrixDoc, field: &str, dim: usize) -> Result<CMat> {
    if doc.len() != dim || doc.iter().any(|r| r.len() != dim) {
        return Err(Error::Parse(format!("field '{field}': expected a {dim}x{dim} matrix")));
    }
    let mut m = CMat::zeros(dim, dim);
    for (i, row) in doc.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            if !z[0].is_finite() || !z[1].is_finite() {
                return Err(Error::Parse(format!("field '{field}': entry ({i}, {j}) is not finite")));
            }
            m[(i, j)] = c64(z[0], z[1]);
        }
    }
    Ok(m)
}

pub fn matrix_to_doc(m: &CMat) -> MatrixDoc {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

pub fn vector_from_pairs(pairs: &[ComplexPair]) -> CVec {
    CVec::from_iterator(pairs.len(), pairs.iter().map(|z| c64(z[0], z[1])))
}

fn hops_from_doc(docs: &[MatrixDoc], field: &str, doc: &ModelDoc) -> Result<Vec<CMat>> {
    if docs.len() != doc.range {
        return Err(Error::Parse(format!("field '{field}': expected {} matrices, found {}", doc.range, docs.len())));
    }
    docs.iter().enumerate().map(|(r, m)| matrix_from_doc(m, &format!("{field}[{r}]"), doc.dim_v)).collect()
}

impl ModelDoc {
    pub fn to_model(&self, tol: &Tolerances) -> Result<ModelParams> {
        let on_site = matrix_from_doc(&self.on_site, "on_site", self.dim_v)?;
        let right = hops_from_doc(&self.right_hops, "right_hops", self)?;
        let left = match &self.left_hops {
            Some(l) => hops_from_doc(l, "left_hops", self)?,
            None => right.iter().map(|a| a.adjoint()).collect(),
        };
        build_model(self.dim_v, self.range, on_site, left, right, tol)
    }

    pub fn from_model(model: &ModelParams, grading: Option<&[i8]>) -> Self {
        ModelDoc {
            dim_v: model.dim_v,
            range: model.range,
            on_site: matrix_to_doc(&model.on_site),
            right_hops: model.right_hops.iter().map(matrix_to_doc).collect(),
            left_hops: Some(model.left_hops.iter().map(matrix_to_doc).collect()),
            grading: grading.map(<[i8]>::to_vec),
        }
    }

    /// Chiral split with the declared grading, or a detected one.
    pub fn to_chiral(&self, tol: &Tolerances) -> Result<ChiralModel> {
        let model = self.to_model(tol)?;
        let grading = match &self.grading {
            Some(g) => g.clone(),
            None => detect_grading(&model, tol).ok_or_else(|| Error::InvalidGrading("no chiral grading found; declare one with \"grading\"".into()))?,
        };
        chiral_split(&model, &grading, tol)
    }
}

pub fn parse_model_doc(text: &str) -> Result<ModelDoc> {
    serde_json::from_str(text).map_err(json_error)
}

pub fn chiral_to_doc(cm: &ChiralModel) -> ModelDoc {
    ModelDoc::from_model(&cm.base, Some(&cm.grading))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ParamAxis {
    /// `n` points from `min` to `max` inclusive.
    pub fn points(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![self.min];
        }
        (0..n).map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64).collect()
    }
}

/// Affine two-parameter family `base + p1 * d1 + p2 * d2`. The direction
/// documents may omit `dim_v`/`range`-consistent `left_hops`, which then
/// default to adjoints like any model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub param1: ParamAxis,
    pub param2: ParamAxis,
    pub base: ModelDoc,
    pub d1: ModelDoc,
    pub d2: ModelDoc,
}

impl FamilyDoc {
    pub fn model_at(&self, p1: f64, p2: f64, tol: &Tolerances) -> Result<ChiralModel> {
        let parts = [self.base.to_model(tol)?, self.d1.to_model(tol)?, self.d2.to_model(tol)?];
        if parts.iter().any(|m| m.dim_v != parts[0].dim_v || m.range != parts[0].range) {
            return Err(Error::Parse("family members must share dim_v and range".into()));
        }
        let w = [1.0, p1, p2];
        let comb = |f: &dyn Fn(&ModelParams) -> CMat| parts.iter().zip(w).map(|(m, x)| f(m) * c64(x, 0.0)).fold(CMat::zeros(parts[0].dim_v, parts[0].dim_v), |a, b| a + b);
        let on_site = comb(&|m| m.on_site.clone());
        let right = (0..parts[0].range).map(|r| comb(&|m| m.right_hops[r].clone())).collect();
        let left = (0..parts[0].range).map(|r| comb(&|m| m.left_hops[r].clone())).collect();
        let model = build_model(parts[0].dim_v, parts[0].range, on_site, left, right, tol)?;
        let grading = match &self.base.grading {
            Some(g) => g.clone(),
            None => detect_grading(&model, tol).ok_or_else(|| Error::InvalidGrading("family needs a \"grading\" on its base".into()))?,
        };
        chiral_split(&model, &grading, tol)
    }
}

pub fn parse_family_doc(text: &str) -> Result<FamilyDoc> {
    serde_json::from_str(text).map_err(json_error)
}
