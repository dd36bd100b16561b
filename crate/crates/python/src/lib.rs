//! Python bindings. Structured results come back as plain dicts and lists
//! (built with `json.loads` from the serialized reports), matrices as nested
//! lists of `complex`.

use std::collections::HashMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use bec_core::deform::full_deformation;
use bec_core::halfspace::{edge_modes, edge_modes_companion, edge_modes_truncated, in_gap_scan};
use bec_core::io::{chiral_to_doc, parse_model_doc};
use bec_core::linalg::{CMat, C64};
use bec_core::spectrum::{certify_gap, chiral_gap_certificate};
use bec_core::tol::DEFAULT_NUM_K;
use bec_core::verify::{verify_all, verify_ensemble, EnsembleSpec, DEFAULT_SCAN_CELLS};
use bec_core::winding::bulk_winding;
use bec_core::{fixtures, Error, Tolerances};

create_exception!(chiral_bec, BecError, PyException, "Raised for invalid models and failed computations.");

fn err(e: Error) -> PyErr {
    BecError::new_err(e.to_string())
}

fn tolerances(overrides: Option<HashMap<String, f64>>) -> PyResult<Tolerances> {
    let mut tol = Tolerances::default();
    for (k, v) in overrides.unwrap_or_default() {
        tol.set(&k, v).map_err(err)?;
    }
    Ok(tol)
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| BecError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<C64>>, what: &str) -> PyResult<CMat> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(BecError::new_err(format!("{what}: expected a square matrix")));
    }
    Ok(CMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &CMat) -> Vec<Vec<C64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A gapped-or-not chiral lattice model with a balanced or unbalanced grading.
#[pyclass(module = "chiral_bec", frozen)]
pub struct ChiralModel {
    inner: bec_core::ChiralModel,
}

#[pymethods]
impl ChiralModel {
    /// Model from the JSON document format used by the `bec` tool.
    #[staticmethod]
    #[pyo3(signature = (text, tol=None))]
    fn from_json(text: &str, tol: Option<HashMap<String, f64>>) -> PyResult<Self> {
        let t = tolerances(tol)?;
        let inner = parse_model_doc(text).and_then(|d| d.to_chiral(&t)).map_err(err)?;
        Ok(ChiralModel { inner })
    }

    /// Built-in fixture: `dimerized-plus`, `dimerized-minus`,
    /// `dimerized-trivial`, `ssh:<t1>,<t2>` or `double-root:<theta>`.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        let mut all = fixtures::by_name(name).map_err(err)?;
        if all.len() != 1 {
            return Err(BecError::new_err(format!("fixture '{name}' names {} models; pick one", all.len())));
        }
        Ok(ChiralModel { inner: all.remove(0).1 })
    }

    /// Model from its off-diagonal blocks: `v : V+ -> V-`, and per hop
    /// `a_pm[r] : V+ -> V-`, `a_mp[r] : V- -> V+`.
    #[staticmethod]
    #[pyo3(signature = (v, a_pm, a_mp, tol=None))]
    fn from_blocks(v: Vec<Vec<C64>>, a_pm: Vec<Vec<Vec<C64>>>, a_mp: Vec<Vec<Vec<C64>>>, tol: Option<HashMap<String, f64>>) -> PyResult<Self> {
        let t = tolerances(tol)?;
        let a_pm = a_pm.into_iter().map(|m| matrix(m, "a_pm")).collect::<PyResult<Vec<_>>>()?;
        let a_mp = a_mp.into_iter().map(|m| matrix(m, "a_mp")).collect::<PyResult<Vec<_>>>()?;
        let inner = bec_core::ChiralModel::from_blocks(matrix(v, "v")?, a_pm, a_mp, &t).map_err(err)?;
        Ok(ChiralModel { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&chiral_to_doc(&self.inner)).expect("model document serializes")
    }

    #[getter]
    fn dim_v(&self) -> usize {
        self.inner.base.dim_v
    }

    #[getter]
    fn range(&self) -> usize {
        self.inner.range()
    }

    #[getter]
    fn grading(&self) -> Vec<i8> {
        self.inner.grading.clone()
    }

    /// Bloch Hamiltonian `H(lambda)`.
    fn hamiltonian(&self, lam: C64) -> Vec<Vec<C64>> {
        rows(&self.inner.base.hamiltonian(lam))
    }

    /// Off-diagonal block `h_{+-}(lambda)`.
    fn h_pm(&self, lam: C64) -> Vec<Vec<C64>> {
        rows(&self.inner.h_pm(lam))
    }

    /// Band structure and certified gap: `{"gap": ..., "bands": ...}`.
    #[pyo3(signature = (num_k=DEFAULT_NUM_K, energy=None))]
    fn spectrum(&self, py: Python<'_>, num_k: usize, energy: Option<f64>) -> PyResult<Py<PyAny>> {
        let (bands, gap) = certify_gap(&self.inner.base, energy, num_k).map_err(err)?;
        to_py(py, &serde_json::json!({ "gap": gap, "bands": bands }))
    }

    /// Certified lower bound on `min sigma_min(h_{+-})` over the circle.
    fn chiral_gap(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &chiral_gap_certificate(&self.inner, DEFAULT_NUM_K).map_err(err)?)
    }

    /// Bulk winding number, by phase unwrapping and by root counting.
    #[pyo3(signature = (tol=None))]
    fn winding(&self, py: Python<'_>, tol: Option<HashMap<String, f64>>) -> PyResult<Py<PyAny>> {
        let t = tolerances(tol)?;
        to_py(py, &bulk_winding(&self.inner, &t).map_err(err)?)
    }

    /// Zero-energy edge kernels. `method` is `both`, `companion` or
    /// `truncated`.
    #[pyo3(signature = (cells=None, method="both", tol=None))]
    fn edge_modes(&self, py: Python<'_>, cells: Option<usize>, method: &str, tol: Option<HashMap<String, f64>>) -> PyResult<Py<PyAny>> {
        let t = tolerances(tol)?;
        let r = match method {
            "both" => edge_modes(&self.inner, cells, &t),
            "companion" => edge_modes_companion(&self.inner, &t),
            "truncated" => edge_modes_truncated(&self.inner, 0.0, cells, &t),
            other => return Err(BecError::new_err(format!("unknown method '{other}'"))),
        }
        .map_err(err)?;
        to_py(py, &r)
    }

    /// In-gap eigenvalues of the `cells`-cell truncation within `window`.
    fn in_gap_scan(&self, py: Python<'_>, cells: usize, window: (f64, f64)) -> PyResult<Py<PyAny>> {
        to_py(py, &in_gap_scan(&self.inner.base, cells, window).map_err(err)?)
    }

    /// Certified homotopy to a diagonal monomial loop.
    #[pyo3(signature = (tol=None))]
    fn deform(&self, py: Python<'_>, tol: Option<HashMap<String, f64>>) -> PyResult<Py<PyAny>> {
        let t = tolerances(tol)?;
        let d = py.detach(|| full_deformation(&self.inner, &t)).map_err(err)?;
        to_py(py, &d)
    }

    /// All applicable correspondence checks.
    #[pyo3(signature = (cells=DEFAULT_SCAN_CELLS, tol=None))]
    fn verify(&self, py: Python<'_>, cells: usize, tol: Option<HashMap<String, f64>>) -> PyResult<Py<PyAny>> {
        let t = tolerances(tol)?;
        let case = py.detach(|| verify_all("model", &self.inner, cells, &t)).map_err(err)?;
        to_py(py, &case)
    }

    fn __repr__(&self) -> String {
        format!("ChiralModel(dim_v={}, range={}, grading={:?})", self.inner.base.dim_v, self.inner.range(), self.inner.grading)
    }
}

/// Verify a seeded random ensemble; the report is ordered by member index.
#[pyfunction]
#[pyo3(signature = (seed, count, dim_v=2, range=1, coefficient_scale=1.0, gap_floor=0.05, cells=DEFAULT_SCAN_CELLS, tol=None))]
#[allow(clippy::too_many_arguments)]
fn verify_random_ensemble(
    py: Python<'_>,
    seed: u64,
    count: usize,
    dim_v: usize,
    range: usize,
    coefficient_scale: f64,
    gap_floor: f64,
    cells: usize,
    tol: Option<HashMap<String, f64>>,
) -> PyResult<Py<PyAny>> {
    let t = tolerances(tol)?;
    let spec = EnsembleSpec { seed, count, dim_v, range, coefficient_scale, gap_floor };
    let report = py.detach(|| verify_ensemble(&spec, cells, &t)).map_err(err)?;
    to_py(py, &report)
}

/// Default tolerances by name.
#[pyfunction]
fn default_tolerances(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &Tolerances::default())
}

#[pymodule]
fn chiral_bec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ChiralModel>()?;
    m.add_function(wrap_pyfunction!(verify_random_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(default_tolerances, m)?)?;
    m.add("BecError", m.py().get_type::<BecError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
