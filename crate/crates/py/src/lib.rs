//! Python bindings for the `moescale` scaling-law toolkit.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use moescale::artifact::{to_json_bytes, LawArtifact, SurfaceArtifact};
use moescale::frontier::{optimal_size_given_sparsity, optimal_sparsity_given_size, FrontierPoint};
use moescale::law::{self, FitLawOptions, LawForm, ObjectiveOptions, ScalingLawCoeffs};
use moescale::model::{self, NaRule};
use moescale::runs::{self, RunTable};
use moescale::surface::{self, Degrees, SizeVariable, SurfaceFit};
use moescale::synth::{self, SynthDesign, SynthGrid, Truth};

fn err(e: moescale::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_text<T: serde::Serialize>(v: &T) -> PyResult<String> {
    let bytes = to_json_bytes(v).map_err(err)?;
    Ok(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
}

#[pyclass(name = "MoeConfig", module = "pymoescale", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMoeConfig {
    inner: model::MoeConfig,
}

#[pymethods]
impl PyMoeConfig {
    #[new]
    #[pyo3(signature = (n_layers, d_model, d_head, e_total, e_active, granularity = 1, n_ctx = 2048, n_vocab = 50432))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_layers: u64,
        d_model: u64,
        d_head: u64,
        e_total: u64,
        e_active: u64,
        granularity: u64,
        n_ctx: u64,
        n_vocab: u64,
    ) -> PyResult<Self> {
        let inner =
            model::MoeConfig::new(n_layers, d_model, d_head, e_total, e_active, granularity, n_ctx, n_vocab).map_err(err)?;
        Ok(PyMoeConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyMoeConfig { inner: model::MoeConfig::from_json_str(text).map_err(err)? })
    }

    #[getter]
    fn sparsity(&self) -> f64 {
        self.inner.sparsity()
    }

    /// `(n_total, n_active)`.
    #[pyo3(signature = (include_input_embedding = false))]
    fn count_params(&self, include_input_embedding: bool) -> PyResult<(u64, u64)> {
        let c = model::count_params(&self.inner, include_input_embedding).map_err(err)?;
        Ok((c.n_total, c.n_active))
    }

    fn flops_per_token(&self) -> PyResult<f64> {
        moescale::flops::flops_per_token(&self.inner).map_err(err)
    }

    fn flops_breakdown<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let b = moescale::flops::flops_breakdown(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        for (k, v) in [
            ("qkv_proj", b.qkv_proj),
            ("attn_logits", b.attn_logits),
            ("attn_values", b.attn_values),
            ("router", b.router),
            ("experts", b.experts),
            ("unembedding", b.unembedding),
            ("total", b.total),
        ] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn estimator_ratio(&self) -> PyResult<f64> {
        moescale::flops::estimator_ratio(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "MoeConfig(n_layers={}, d_model={}, d_head={}, e_total={}, e_active={}, granularity={}, n_ctx={}, n_vocab={})",
            c.n_layers, c.d_model, c.d_head, c.e_total, c.e_active, c.granularity, c.n_ctx, c.n_vocab
        )
    }
}

#[pyclass(name = "LawCoeffs", module = "pymoescale", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyLawCoeffs {
    inner: ScalingLawCoeffs,
}

#[pymethods]
impl PyLawCoeffs {
    #[staticmethod]
    fn published() -> Self {
        PyLawCoeffs { inner: ScalingLawCoeffs::published() }
    }

    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn moe(a: f64, b: f64, c: f64, d: f64, e: f64, alpha: f64, beta: f64, gamma: f64, lambda_: f64, delta_exp: f64) -> Self {
        PyLawCoeffs { inner: ScalingLawCoeffs::moe_from_linear(a, b, c, d, e, alpha, beta, gamma, lambda_, delta_exp) }
    }

    #[staticmethod]
    fn dense(a: f64, b: f64, e: f64, alpha: f64, beta: f64) -> Self {
        PyLawCoeffs { inner: ScalingLawCoeffs::dense_from_linear(a, b, e, alpha, beta) }
    }

    #[pyo3(signature = (n, d, sparsity = 0.0))]
    fn predict(&self, n: f64, d: f64, sparsity: f64) -> PyResult<f64> {
        self.inner.predict(n, d, sparsity).map_err(err)
    }

    #[getter]
    fn form(&self) -> &'static str {
        match self.inner.form {
            LawForm::Dense => "dense",
            LawForm::Moe => "moe",
        }
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn delta_exp(&self) -> f64 {
        self.inner.delta_exp
    }

    /// Linear-scale `(a, b, c, d, e)`.
    #[getter]
    fn scales(&self) -> (f64, f64, f64, f64, f64) {
        let c = &self.inner;
        (c.log_a.exp(), c.log_b.exp(), c.log_c.exp(), c.log_d.exp(), c.log_e.exp())
    }

    fn to_json(&self) -> PyResult<String> {
        json_text(&self.inner)
    }
}

#[pyclass(name = "RunTable", module = "pymoescale", frozen, skip_from_py_object)]
pub struct PyRunTable {
    inner: RunTable,
}

#[pymethods]
impl PyRunTable {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyRunTable { inner: runs::load_runs(&path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Columns as a dict of lists.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let t = &self.inner;
        d.set_item("run_id", t.iter().map(|r| r.run_id.clone()).collect::<Vec<_>>())?;
        d.set_item("n_total", t.iter().map(|r| r.n_total).collect::<Vec<_>>())?;
        d.set_item("n_active", t.iter().map(|r| r.n_active).collect::<Vec<_>>())?;
        d.set_item("sparsity", t.iter().map(|r| r.sparsity).collect::<Vec<_>>())?;
        d.set_item("tokens", t.iter().map(|r| r.tokens).collect::<Vec<_>>())?;
        d.set_item("compute", t.iter().map(|r| r.compute).collect::<Vec<_>>())?;
        d.set_item("loss", t.iter().map(|r| r.loss).collect::<Vec<_>>())?;
        Ok(d)
    }

    fn to_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        let mut bytes = Vec::new();
        self.inner.write_csv(&mut bytes).map_err(err)?;
        moescale::artifact::write_atomic(&path, &bytes).map_err(err)
    }

    /// `(fit, holdout)` split on one sparsity value.
    fn split_holdout(&self, sparsity: f64) -> PyResult<(PyRunTable, PyRunTable)> {
        let (f, h) = runs::split_holdout_by_sparsity(&self.inner, sparsity).map_err(err)?;
        Ok((PyRunTable { inner: f }, PyRunTable { inner: h }))
    }
}

#[pyclass(name = "LawFit", module = "pymoescale", frozen, skip_from_py_object)]
pub struct PyLawFit {
    inner: law::ScalingLawFit,
}

#[pymethods]
impl PyLawFit {
    #[getter]
    fn coeffs(&self) -> PyLawCoeffs {
        PyLawCoeffs { inner: self.inner.coeffs }
    }

    #[getter]
    fn objective_value(&self) -> f64 {
        self.inner.objective_value
    }

    #[getter]
    fn fit_mse(&self) -> f64 {
        self.inner.fit_metrics.mse
    }

    #[getter]
    fn fit_huber(&self) -> f64 {
        self.inner.fit_metrics.huber
    }

    #[getter]
    fn holdout_mse(&self) -> Option<f64> {
        self.inner.holdout_metrics.map(|m| m.mse)
    }

    #[getter]
    fn starts_evaluated(&self) -> usize {
        self.inner.starts_evaluated
    }

    fn to_json(&self) -> PyResult<String> {
        json_text(&LawArtifact::new(self.inner.clone()))
    }
}

fn frontier_dict<'py>(py: Python<'py>, p: &FrontierPoint) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("budget", p.budget)?;
    d.set_item("size", p.opt_size)?;
    d.set_item("sparsity", p.opt_sparsity)?;
    d.set_item("loss", p.opt_loss)?;
    d.set_item("at_boundary", p.at_boundary)?;
    d.set_item("extrapolated", p.extrapolated)?;
    Ok(d)
}

#[pyclass(name = "Surface", module = "pymoescale", frozen, skip_from_py_object)]
pub struct PySurface {
    inner: SurfaceFit,
}

#[pymethods]
impl PySurface {
    fn predict(&self, size: f64, sparsity: f64) -> PyResult<f64> {
        Ok(self.inner.predict(size, sparsity).map_err(err)?.loss)
    }

    #[getter]
    fn degrees(&self) -> (usize, usize, usize) {
        let d: [usize; 3] = self.inner.degrees.into();
        (d[0], d[1], d[2])
    }

    #[pyo3(signature = (sparsity, size_min = None, size_max = None))]
    fn optimal_size<'py>(
        &self,
        py: Python<'py>,
        sparsity: f64,
        size_min: Option<f64>,
        size_max: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let interval = size_min.zip(size_max);
        let p = optimal_size_given_sparsity(&self.inner, sparsity, interval).map_err(err)?;
        frontier_dict(py, &p)
    }

    fn optimal_sparsity<'py>(&self, py: Python<'py>, size: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = optimal_sparsity_given_size(&self.inner, size, None).map_err(err)?;
        frontier_dict(py, &p)
    }

    fn to_json(&self) -> PyResult<String> {
        json_text(&SurfaceArtifact::from_fit(&self.inner, Default::default()))
    }
}

#[pyfunction]
fn huber_loss(residual: f64, huber_delta: f64) -> f64 {
    law::huber_loss(residual, huber_delta)
}

/// Noise-free or noisy runs drawn from a law.
#[pyfunction]
#[pyo3(signature = (coeffs, budgets, sparsities, sizes_per_cell, size_min, size_max, noise_sigma = 0.0, seed = 0, expert_fraction = 1.0))]
#[allow(clippy::too_many_arguments)]
fn synth_law(
    coeffs: &PyLawCoeffs,
    budgets: Vec<f64>,
    sparsities: Vec<f64>,
    sizes_per_cell: usize,
    size_min: f64,
    size_max: f64,
    noise_sigma: f64,
    seed: u64,
    expert_fraction: f64,
) -> PyResult<PyRunTable> {
    let design = SynthDesign {
        truth: Truth::Law(coeffs.inner),
        grid: SynthGrid {
            budgets,
            sparsities,
            sizes_per_cell,
            size_span: (size_min, size_max),
            noise_sigma,
            noise_model: None,
            seed,
            na_rule: NaRule::Structural { expert_fraction },
            max_records: None,
        },
    };
    Ok(PyRunTable { inner: synth::generate_runs(&design).map_err(err)?.table })
}

#[pyfunction]
#[pyo3(signature = (table, form = "moe", starts_fraction = 1.0, seed = 0, huber_delta = law::DEFAULT_HUBER_DELTA, holdout = None))]
fn fit_law(
    py: Python<'_>,
    table: &PyRunTable,
    form: &str,
    starts_fraction: f64,
    seed: u64,
    huber_delta: f64,
    holdout: Option<&PyRunTable>,
) -> PyResult<PyLawFit> {
    let form: LawForm = form.parse().map_err(err)?;
    let opts = FitLawOptions {
        objective: ObjectiveOptions { huber_delta, ..Default::default() },
        starts_fraction,
        seed,
        ..Default::default()
    };
    let records = &table.inner;
    let mut fit = py.detach(|| law::fit_law(records, form, &opts)).map_err(err)?;
    if let Some(h) = holdout {
        fit.attach_holdout(&h.inner).map_err(err)?;
    }
    Ok(PyLawFit { inner: fit })
}

#[pyfunction]
#[pyo3(signature = (table, degrees = None, size_variable = "total"))]
fn fit_surface(table: &PyRunTable, degrees: Option<(usize, usize, usize)>, size_variable: &str) -> PyResult<PySurface> {
    let sv: SizeVariable = size_variable.parse().map_err(err)?;
    let d = match degrees {
        Some((a, b, c)) => Degrees::new(a, b, c),
        None => surface::grid_search_degrees(&table.inner, sv, &Default::default()).map_err(err)?.degrees,
    };
    Ok(PySurface { inner: surface::fit_surface(&table.inner, d, sv).map_err(err)? })
}

/// `(numeric exponent, closed form or None)` for `N* ~ C^a`.
#[pyfunction]
#[pyo3(signature = (coeffs, sparsity, budgets, expert_fraction = 1.0))]
fn optimal_exponent(coeffs: &PyLawCoeffs, sparsity: f64, budgets: Vec<f64>, expert_fraction: f64) -> PyResult<(f64, Option<f64>)> {
    let rule = NaRule::Structural { expert_fraction };
    let r = law::compute_optimal_exponent(&coeffs.inner, sparsity, &rule, &budgets, None).map_err(err)?;
    Ok((r.numeric, r.closed_form))
}

/// `(exponent, prefactor)` of `y ~ prefactor * x^exponent`.
#[pyfunction]
fn power_law_fit(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(PyValueError::new_err("xs and ys differ in length"));
    }
    let pts: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
    let p = moescale::frontier::power_law_fit(&pts).map_err(err)?;
    Ok((p.exponent, p.prefactor))
}

#[pymodule]
fn pymoescale(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", moescale::artifact::TOOL_VERSION)?;
    m.add_class::<PyMoeConfig>()?;
    m.add_class::<PyLawCoeffs>()?;
    m.add_class::<PyRunTable>()?;
    m.add_class::<PyLawFit>()?;
    m.add_class::<PySurface>()?;
    m.add_function(wrap_pyfunction!(huber_loss, m)?)?;
    m.add_function(wrap_pyfunction!(synth_law, m)?)?;
    m.add_function(wrap_pyfunction!(fit_law, m)?)?;
    m.add_function(wrap_pyfunction!(fit_surface, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(power_law_fit, m)?)?;
    Ok(())
}
