//! Python bindings: model loading and prediction, preprocessing, synthetic
//! data, architecture summaries, metrics and training.

use std::path::PathBuf;
use std::sync::Arc;

use isl_core::app::{self, TrainOverrides};
use isl_core::data::synth_generate;
use isl_core::metrics::{confusion, macro_report as core_macro_report};
use isl_core::model::{load_model, save_model, Model, Profile};
use isl_core::nn::Tensor;
use isl_core::preproc::io::decode_rgb;
use isl_core::preproc::run_pipeline;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_profile(profile: &str) -> PyResult<Profile> {
    profile.parse().map_err(value_err)
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A trained or freshly initialized classifier. Immutable from Python.
#[pyclass(name = "Model", frozen, module = "isl_py")]
struct PyModel {
    inner: Arc<Model>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(load_model(&path).map_err(runtime_err)?) })
    }

    /// Random weights for `profile`, one output per label.
    #[staticmethod]
    #[pyo3(signature = (labels, profile = "desk", seed = 1))]
    fn init(labels: Vec<String>, profile: &str, seed: u64) -> PyResult<Self> {
        let profile = parse_profile(profile)?;
        let manifest = profile.manifest(labels.len());
        let model = Model::init(manifest, labels, app::default_pipeline(profile), seed).map_err(value_err)?;
        Ok(Self { inner: Arc::new(model) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(runtime_err)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.manifest().input_shape.clone()
    }

    /// Top-k `(label, probability)` pairs for an encoded PNG or JPEG.
    #[pyo3(signature = (data, top_k = 3))]
    fn predict_image(&self, py: Python<'_>, data: &[u8], top_k: usize) -> PyResult<Vec<(String, f64)>> {
        let model = Arc::clone(&self.inner);
        let data = data.to_vec();
        let (top, _) = py.detach(move || app::service::predict_image(&model, &data, top_k)).map_err(value_err)?;
        Ok(top.into_iter().map(|(c, p)| (self.inner.labels()[c].clone(), p)).collect())
    }

    #[pyo3(signature = (path, top_k = 3))]
    fn predict_file(&self, py: Python<'_>, path: PathBuf, top_k: usize) -> PyResult<Vec<(String, f64)>> {
        let data = std::fs::read(&path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        self.predict_image(py, &data, top_k)
    }

    /// Class probabilities for an already preprocessed input, given as a flat
    /// row-major list matching `input_shape`.
    fn predict_array(&self, py: Python<'_>, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let input = Tensor::new(self.inner.manifest().input_shape.clone(), values).map_err(value_err)?;
        let model = Arc::clone(&self.inner);
        let p = py.detach(move || model.predict(&input)).map_err(value_err)?;
        Ok(p.probabilities)
    }

    fn __repr__(&self) -> String {
        format!("Model(id={:?}, classes={})", self.inner.id(), self.inner.classes())
    }
}

/// Runs the default pipeline of `profile` on an encoded image; returns
/// `(shape, values)` with values flattened row-major.
#[pyfunction]
#[pyo3(signature = (data, profile = "desk"))]
fn preprocess(data: &[u8], profile: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let img = decode_rgb(data).map_err(value_err)?;
    let t = run_pipeline(&img, &app::default_pipeline(parse_profile(profile)?)).map_err(value_err)?;
    Ok((t.shape().to_vec(), t.data().to_vec()))
}

/// Keras-style layer table for a profile.
#[pyfunction]
#[pyo3(signature = (profile = "table1", classes = 35))]
fn inspect(profile: &str, classes: usize) -> PyResult<String> {
    let mut out = Vec::new();
    app::cmd_inspect(parse_profile(profile)?, classes, &mut out).map_err(value_err)?;
    String::from_utf8(out).map_err(runtime_err)
}

/// Writes a synthetic labelled image tree; returns the number of files.
#[pyfunction]
#[pyo3(signature = (out, classes, per_class, seed = 0))]
fn synth(py: Python<'_>, out: PathBuf, classes: usize, per_class: usize, seed: u64) -> PyResult<usize> {
    let summary = py.detach(move || synth_generate(&out, classes, per_class, seed)).map_err(value_err)?;
    Ok(summary.files)
}

/// Per-class and macro metrics as a dict (same schema as `isl eval --json`).
#[pyfunction]
#[pyo3(signature = (truth, predicted, classes, labels = None))]
fn macro_report<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    classes: usize,
    labels: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cm = confusion(&truth, &predicted, classes).map_err(value_err)?;
    let mut report = core_macro_report(&cm).map_err(value_err)?;
    if let Some(labels) = labels {
        report = report.with_labels(&labels);
    }
    json_loads(py, &report.to_json())
}

/// Trains from a TOML config and writes the model and history it names;
/// returns the per-epoch records.
#[pyfunction]
#[pyo3(signature = (config, dataset = None, model = None, history = None, epochs = None))]
fn train<'py>(
    py: Python<'py>,
    config: PathBuf,
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    history: Option<PathBuf>,
    epochs: Option<u32>,
) -> PyResult<Bound<'py, PyAny>> {
    let overrides = TrainOverrides { dataset, model, history, epochs, ..TrainOverrides::default() };
    let h = py
        .detach(move || app::cmd_train(&config, &overrides, &mut std::io::sink()))
        .map_err(runtime_err)?;
    json_loads(py, &serde_json::to_string(&h.records).map_err(runtime_err)?)
}

#[pymodule]
pub fn isl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(inspect, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(macro_report, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("LABELS", isl_core::data::LABELS.to_vec())?;
    Ok(())
}
