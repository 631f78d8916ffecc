//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use dxpriv::harness::{self, ExperimentConfig};
use dxpriv::{mech, metric, select, statq, synth, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for dxpriv::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn queries(rows: Vec<Vec<f64>>) -> PyResult<dxpriv::QueryMatrix> {
    dxpriv::QueryMatrix::from_rows(&rows).py()
}

/// Per-pair privacy budgets; `inf` means unconstrained.
#[pyclass(name = "PrivacyMetric", from_py_object)]
#[derive(Clone)]
struct PyMetric {
    inner: dxpriv::PrivacyMetric,
}

#[pymethods]
impl PyMetric {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: dxpriv::PrivacyMetric::from_rows(&rows).py()?,
        })
    }

    #[staticmethod]
    fn euclidean(points: Vec<Vec<f64>>) -> PyResult<Self> {
        let u = dxpriv::UniversePoints::new(points).py()?;
        Ok(Self {
            inner: metric::euclidean_metric(&u).py()?,
        })
    }

    #[staticmethod]
    fn uniform(n: usize, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: metric::uniform_metric(n, eps).py()?,
        })
    }

    fn blowfish(&self, threshold: f64, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: metric::blowfish_metric(&self.inner, threshold, eps).py()?,
        })
    }

    fn smooth(&self, threshold: f64, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: metric::smooth_metric(&self.inner, threshold, eps).py()?,
        })
    }

    fn closure(&self) -> PyResult<Self> {
        Ok(Self {
            inner: metric::metric_closure(&self.inner).py()?,
        })
    }

    /// True when symmetric, zero-diagonal and triangle-satisfying within `tol`.
    #[pyo3(signature = (tol = dxpriv::DEFAULT_TOL))]
    fn is_valid(&self, tol: f64) -> bool {
        dxpriv::validate_metric(&self.inner, tol).is_valid()
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.size();
        if i >= n || j >= n {
            return Err(to_py(Error::Index { index: i.max(j), size: n }));
        }
        Ok(self.inner.get(i, j))
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }

    fn __repr__(&self) -> String {
        format!("PrivacyMetric(size={})", self.inner.size())
    }
}

/// Noise scales `c` and transformed queries `Q′`.
#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: dxpriv::ModelParams,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(scales: Vec<f64>, transformed: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: dxpriv::ModelParams::new(scales, queries(transformed)?).py()?,
        })
    }

    #[getter]
    fn scales(&self) -> Vec<f64> {
        self.inner.scales().to_vec()
    }

    #[getter]
    fn transformed(&self) -> Vec<Vec<f64>> {
        self.inner.transformed().to_rows()
    }

    fn is_feasible(&self, metric: &PyMetric) -> PyResult<bool> {
        Ok(dxpriv::check_feasibility(&self.inner, &metric.inner, dxpriv::DEFAULT_TOL).py()?.feasible)
    }

    fn improvement_factor(&self, q: Vec<Vec<f64>>, metric: &PyMetric) -> PyResult<f64> {
        select::improvement_factor(&self.inner, &queries(q)?, &metric.inner).py()
    }

    fn l2_error_bound(&self, q: Vec<Vec<f64>>, n: f64) -> PyResult<f64> {
        Ok(mech::l2_error_bound(&self.inner, &queries(q)?, n))
    }

    fn __repr__(&self) -> String {
        format!("ModelParams(scales={:?})", self.inner.scales())
    }
}

fn wrap(p: dxpriv::ModelParams) -> PyParams {
    PyParams { inner: p }
}

#[pyfunction]
fn closed_form_single(q: Vec<f64>, metric: &PyMetric) -> PyResult<PyParams> {
    select::closed_form_single(&q, &metric.inner).py().map(wrap)
}

#[pyfunction]
fn strategy1(q: Vec<Vec<f64>>, metric: &PyMetric) -> PyResult<PyParams> {
    select::strategy1(&queries(q)?, &metric.inner).py().map(wrap)
}

#[pyfunction]
fn strategy2(q: Vec<Vec<f64>>, metric: &PyMetric) -> PyResult<PyParams> {
    select::strategy2(&queries(q)?, &metric.inner).py().map(wrap)
}

/// Returns `(params, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (q, metric, max_iters = select::PSA_DEFAULT_MAX_ITERS, tol = select::PSA_ZERO_STEP))]
fn psa(q: Vec<Vec<f64>>, metric: &PyMetric, max_iters: usize, tol: f64) -> PyResult<(PyParams, usize, bool)> {
    let out = select::psa(&metric.inner, &queries(q)?, max_iters, tol).py()?;
    Ok((wrap(out.params), out.iterations, out.converged))
}

/// Returns `(params, objectives)`.
#[pyfunction]
#[pyo3(signature = (q, metric, n, max_outer = 100, tol = 1e-9))]
fn altmin_preopt(
    q: Vec<Vec<f64>>,
    metric: &PyMetric,
    n: u64,
    max_outer: usize,
    tol: f64,
) -> PyResult<(PyParams, Vec<f64>)> {
    let out = select::altmin_preopt(&queries(q)?, &metric.inner, n, max_outer, tol).py()?;
    Ok((wrap(out.params), out.objectives))
}

/// Returns `(scale, transformed)`.
#[pyfunction]
fn scalar_transform(q: Vec<Vec<f64>>, metric: &PyMetric) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let st = select::scalar_transform(&queries(q)?, &metric.inner).py()?;
    Ok((st.scale, st.transformed.to_rows()))
}

#[pyfunction]
fn laplace_dx(x: Vec<u64>, params: &PyParams, seed: u64) -> PyResult<Vec<f64>> {
    Ok(mech::laplace_dx(&dxpriv::Histogram::new(x), &params.inner, seed).py()?.values)
}

#[pyfunction]
fn laplace_vanilla(x: Vec<u64>, q: Vec<Vec<f64>>, eps: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(mech::laplace_vanilla(&dxpriv::Histogram::new(x), &queries(q)?, eps, seed).py()?.values)
}

/// Synthetic histogram of size `m`.
#[pyfunction]
#[pyo3(signature = (x, transformed, c, m, seed, cap = synth::DEFAULT_CANDIDATE_CAP))]
fn smalldb(x: Vec<u64>, transformed: Vec<Vec<f64>>, c: f64, m: u64, seed: u64, cap: usize) -> PyResult<Vec<u64>> {
    let y = synth::smalldb_with_size(
        &dxpriv::Histogram::new(x),
        &queries(transformed)?,
        c,
        m,
        cap,
        &mut mech::seeded_rng(seed),
    )
    .py()?;
    Ok(y.counts().to_vec())
}

/// Averaged synthetic histogram.
#[pyfunction]
fn mwem(x: Vec<u64>, transformed: Vec<Vec<f64>>, c: f64, rounds: usize, seed: u64) -> PyResult<Vec<f64>> {
    let out = synth::mwem(
        &dxpriv::Histogram::new(x),
        &queries(transformed)?,
        c,
        rounds,
        &mut mech::seeded_rng(seed),
    )
    .py()?;
    Ok(out.synthetic)
}

/// Returns `(scale, mapped_values, objective)`.
#[pyfunction]
#[pyo3(signature = (values, budget, n, grid = statq::DEFAULT_GRID))]
fn marginal_coordinate_opt(
    values: Vec<f64>,
    budget: &PyMetric,
    n: u64,
    grid: usize,
) -> PyResult<(f64, Vec<f64>, f64)> {
    let sol = statq::marginal_coordinate_opt(&values, &budget.inner, n, grid).py()?;
    Ok((sol.scale, sol.mapped, sol.objective))
}

/// Runs an experiment from a JSON config and returns the JSON summary.
#[pyfunction]
fn run_experiment_json(config: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = harness::run_single_experiment(&cfg).py()?;
    let mut buf = Vec::new();
    harness::io::write_report_json(&report, &mut buf).py()?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Default desk-scale config as JSON.
#[pyfunction]
#[pyo3(signature = (seed = harness::DEFAULT_SEED))]
fn default_config_json(seed: u64) -> PyResult<String> {
    serde_json::to_string(&ExperimentConfig::desk(seed)).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn dxpriv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMetric>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(closed_form_single, m)?)?;
    m.add_function(wrap_pyfunction!(strategy1, m)?)?;
    m.add_function(wrap_pyfunction!(strategy2, m)?)?;
    m.add_function(wrap_pyfunction!(psa, m)?)?;
    m.add_function(wrap_pyfunction!(altmin_preopt, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_transform, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_dx, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_vanilla, m)?)?;
    m.add_function(wrap_pyfunction!(smalldb, m)?)?;
    m.add_function(wrap_pyfunction!(mwem, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_coordinate_opt, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    m.add_function(wrap_pyfunction!(default_config_json, m)?)?;
    Ok(())
}
