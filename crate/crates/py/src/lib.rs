//! Python module `mediate_lab`: datasets, generators, training, effect
//! estimation and the linear baselines.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use mediate_core::baselines;
use mediate_core::datagen::{load_dataset_csv_inferred, Dataset};
use mediate_core::effects::{self, EffectReport};
use mediate_core::error::Error;
use mediate_core::experiment::{self, ExperimentSpec, Scenario};
use mediate_core::imavae::ImavaeModel;
use mediate_core::numkit::Matrix;
use mediate_core::trainer::{self, TrainConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mediate_core::error::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).py_err()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn report_to_py<'py>(py: Python<'py>, r: &EffectReport) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &r.to_json().py_err()?)
}

fn report_from_py(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<EffectReport> {
    let text = py_to_json(py, obj)?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Rows of `(t, y, w, x, z)`; `w` and `z` are optional.
#[pyclass(name = "Dataset", module = "mediate_lab", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    pub inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (t, y, x, w=None, z=None))]
    fn new(
        t: Vec<u8>,
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        w: Option<Vec<Vec<f64>>>,
        z: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let w = w.map(|w| matrix(&w)).transpose()?;
        let z = z.map(|z| matrix(&z)).transpose()?;
        let inner = Dataset::new(t, y, w, matrix(&x)?, z).py_err()?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_dataset_csv_inferred(path).py_err()?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn x_dim(&self) -> usize {
        self.inner.x_dim()
    }

    #[getter]
    fn t(&self) -> Vec<u8> {
        self.inner.t().to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.x())
    }

    #[getter]
    fn w(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.w().map(rows_of)
    }

    #[getter]
    fn z(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.z_true().map(rows_of)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, x_dim={}, cov_dim={}, z_dim={})",
            self.inner.n(),
            self.inner.x_dim(),
            self.inner.cov_dim(),
            self.inner.z_dim()
        )
    }
}

/// A fitted model.
#[pyclass(name = "Model", module = "mediate_lab", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    pub inner: ImavaeModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: ImavaeModel::from_json(text).py_err()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[pyo3(signature = (data, mc_draws=effects::DEFAULT_MC_DRAWS, seed=0))]
    fn estimate_effects<'py>(
        &self,
        py: Python<'py>,
        data: &PyDataset,
        mc_draws: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = effects::estimate_effects(&self.inner, &data.inner, mc_draws, seed).py_err()?;
        report_to_py(py, &r)
    }

    fn posterior_means(&self, data: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&effects::posterior_means(&self.inner, &data.inner).py_err()?))
    }

    #[pyo3(signature = (data, seed=0))]
    fn disentanglement(&self, data: &PyDataset, seed: u64) -> PyResult<f64> {
        effects::disentanglement_score(&self.inner, &data.inner, seed).py_err()
    }

    fn affine_recovery(&self, data: &PyDataset) -> PyResult<Vec<f64>> {
        effects::affine_recovery_score(&self.inner, &data.inner).py_err()
    }
}

/// Draws a benchmark dataset. `config` is a dict of experiment settings
/// layered over the scenario preset. Returns `(dataset, truth or None)`.
#[pyfunction]
#[pyo3(signature = (scenario, seed=0, config=None))]
fn generate<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(PyDataset, Option<Bound<'py, PyAny>>)> {
    let spec = spec_for(py, scenario, config)?;
    let g = experiment::generate(&spec, seed).py_err()?;
    let truth = g.truth.as_ref().map(|t| report_to_py(py, t)).transpose()?;
    Ok((PyDataset { inner: g.dataset }, truth))
}

fn spec_for(py: Python<'_>, scenario: &str, config: Option<&Bound<'_, PyAny>>) -> PyResult<ExperimentSpec> {
    let scenario: Scenario = scenario.parse().py_err()?;
    let patch: Option<Value> = match config {
        Some(cfg) => Some(
            serde_json::from_str(&py_to_json(py, cfg)?).map_err(|e| PyValueError::new_err(e.to_string()))?,
        ),
        None => None,
    };
    let spec = ExperimentSpec::from_preset_patch(Some(scenario), patch, scenario).py_err()?;
    spec.validate().py_err()?;
    Ok(spec)
}

/// Trains a model. `config` holds training settings (`alpha`, `beta`,
/// `epochs`, ...). Returns `(model, per-epoch loss records)`.
#[pyfunction]
#[pyo3(signature = (data, config=None))]
fn train<'py>(
    py: Python<'py>,
    data: &PyDataset,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg = match config {
        Some(c) => TrainConfig::from_json(&py_to_json(py, c)?).py_err()?,
        None => TrainConfig::default(),
    };
    let (model, report) = py.detach(|| trainer::train(&data.inner, &cfg)).py_err()?;
    let epochs = serde_json::to_string(&report.epochs).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyModel { inner: model }, json_to_py(py, &epochs)?))
}

#[pyfunction]
fn lsem<'py>(py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    report_to_py(py, &baselines::lsem_estimate(&data.inner).py_err()?)
}

#[pyfunction]
fn hima<'py>(py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    report_to_py(py, &baselines::hima_lite(&data.inner).py_err()?)
}

/// Absolute errors of an estimate against the truth, both as dicts.
#[pyfunction]
fn error_vs_truth<'py>(
    py: Python<'py>,
    estimate: &Bound<'py, PyAny>,
    truth: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let e = effects::error_vs_truth(&report_from_py(py, estimate)?, &report_from_py(py, truth)?);
    let text = serde_json::to_string(&e).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

#[pymodule(name = "mediate_lab")]
pub fn mediate_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(lsem, m)?)?;
    m.add_function(wrap_pyfunction!(hima, m)?)?;
    m.add_function(wrap_pyfunction!(error_vs_truth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
