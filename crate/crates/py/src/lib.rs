//! Python module `hcla`: synthetic data, training, scoring, parsing and sessions.

use std::path::PathBuf;

use chrono::{DateTime, FixedOffset, Utc};
use hcla_core::dataio::{self, GeneratorConfig, SyntheticDataset};
use hcla_core::detector::{TrainConfig, TreeEnsemble};
use hcla_core::evaluation::{fit_temporal, FittedSplit};
use hcla_core::features::{default_split_boundary, FeatureSchema};
use hcla_core::intent::{parse_utterance, ParseContext};
use hcla_core::orchestrator::SessionManager;
use hcla_gateway::{build_manager, load_store, ServiceConfig};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts through JSON so Python receives plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn instant(s: &str) -> PyResult<DateTime<FixedOffset>> {
    DateTime::parse_from_rfc3339(s).map_err(|e| value(format!("{s:?}: {e}")))
}

fn schema_named(name: &str) -> PyResult<FeatureSchema> {
    match name {
        "standard" => Ok(FeatureSchema::standard()),
        "with_burst" | "with-burst" => Ok(FeatureSchema::with_burst()),
        other => Err(value(format!("unknown schema {other:?}; expected \"standard\" or \"with_burst\""))),
    }
}

/// Labeled synthetic transactions with their allow-list and cluster tags.
#[pyclass(module = "hcla", frozen)]
pub struct Dataset {
    inner: SyntheticDataset,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.transactions.len()
    }

    #[getter]
    fn anomalous(&self) -> usize {
        self.inner.transactions.iter().filter(|t| t.label == hcla_core::domain::Label::Anomalous).count()
    }

    /// Writes the CSV plus `.allowlist.txt` and `.clusters.csv` companions.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataio::write_dataset(&path, &self.inner).map_err(runtime)
    }

    /// Rows as dicts, in time order.
    fn rows(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.transactions)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(rows={}, anomalous={})", self.__len__(), self.anomalous())
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 7, n = 20_000, anomaly_rate = 0.178, wallets = None))]
fn generate(seed: u64, n: usize, anomaly_rate: f64, wallets: Option<usize>) -> PyResult<Dataset> {
    let defaults = GeneratorConfig::default();
    let config = GeneratorConfig {
        seed,
        n_transactions: n,
        anomaly_rate,
        n_wallets: wallets.unwrap_or(defaults.n_wallets),
        ..defaults
    };
    let inner = dataio::generate_synthetic(&config).map_err(value)?;
    Ok(Dataset { inner })
}

/// A trained gradient-boosted ensemble.
#[pyclass(module = "hcla", frozen)]
pub struct Model {
    inner: TreeEnsemble,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: dataio::load_model(&path).map_err(runtime)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataio::save_model(&self.inner, &path).map_err(runtime)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_schema.names.clone()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<f64> {
        self.check_arity(&features)?;
        Ok(self.inner.predict_row(&features))
    }

    /// Returns `(base, contributions)`; their sum is the margin.
    fn attribute(&self, features: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        self.check_arity(&features)?;
        let rec = self.inner.attribute_row(&features);
        Ok((rec.base, rec.contributions))
    }

    fn __repr__(&self) -> String {
        format!("Model(trees={}, features={})", self.inner.trees.len(), self.inner.feature_schema.names.len())
    }
}

impl Model {
    fn check_arity(&self, features: &[f64]) -> PyResult<()> {
        let want = self.inner.feature_schema.names.len();
        if features.len() != want {
            return Err(value(format!("expected {want} features, got {}", features.len())));
        }
        Ok(())
    }
}

/// A model fitted on the training side of a temporal split.
#[pyclass(module = "hcla", frozen)]
pub struct Fit {
    inner: FittedSplit,
}

#[pymethods]
impl Fit {
    #[getter]
    fn model(&self) -> Model {
        Model { inner: self.inner.model.clone() }
    }

    #[getter]
    fn train_rows(&self) -> usize {
        self.inner.train_rows
    }

    #[getter]
    fn round_loss(&self) -> Vec<f64> {
        self.inner.report.round_loss.clone()
    }

    /// Metrics on the test side at `threshold`.
    #[pyo3(signature = (threshold = hcla_core::domain::DEFAULT_THRESHOLD))]
    fn evaluate(&self, py: Python<'_>, threshold: f64) -> PyResult<Py<PyAny>> {
        let report = py.detach(|| self.inner.evaluate(threshold)).map_err(value)?;
        to_py(py, &report)
    }
}

#[pyfunction]
#[pyo3(signature = (data, schema = "standard", boundary = None, rounds = None, max_depth = None, learning_rate = None))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    schema: &str,
    boundary: Option<&str>,
    rounds: Option<usize>,
    max_depth: Option<usize>,
    learning_rate: Option<f64>,
) -> PyResult<Fit> {
    let schema = schema_named(schema)?;
    let boundary: DateTime<Utc> = match boundary {
        Some(b) => instant(b)?.to_utc(),
        None => default_split_boundary(),
    };
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        rounds: rounds.unwrap_or(defaults.rounds),
        max_depth: max_depth.unwrap_or(defaults.max_depth),
        learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
        ..defaults
    };
    let store_config = ServiceConfig { data_path: Some(data), ..ServiceConfig::default() };
    let inner = py.detach(|| {
        let store = load_store(&store_config).map_err(runtime)?;
        fit_temporal(store.transactions(), store.allowlist().clone(), boundary, schema, &config).map_err(value)
    })?;
    Ok(Fit { inner })
}

/// Parses one utterance; returns `{"intent": ...}` or `{"clarification": ...}`.
#[pyfunction]
#[pyo3(signature = (text, now = None, wallet = None))]
fn parse(py: Python<'_>, text: &str, now: Option<&str>, wallet: Option<String>) -> PyResult<Py<PyAny>> {
    let now = match now {
        Some(s) => instant(s)?,
        None => Utc::now().fixed_offset(),
    };
    let mut context = ParseContext::new(now);
    if let Some(w) = wallet {
        context = context.with_wallet(w);
    }
    to_py(py, &parse_utterance(text, &context))
}

/// Multi-turn sessions over a served corpus and model.
#[pyclass(module = "hcla", frozen)]
pub struct Service {
    manager: SessionManager,
}

#[pymethods]
impl Service {
    #[new]
    #[pyo3(signature = (model, data = None, now = None, threshold = hcla_core::domain::DEFAULT_THRESHOLD))]
    fn new(py: Python<'_>, model: PathBuf, data: Option<PathBuf>, now: Option<&str>, threshold: f64) -> PyResult<Self> {
        let config = ServiceConfig {
            model_path: model,
            data_path: data,
            now: now.map(instant).transpose()?,
            threshold,
            ..ServiceConfig::default()
        };
        config.validate().map_err(value)?;
        let manager = py.detach(|| build_manager(&config)).map_err(runtime)?;
        Ok(Service { manager })
    }

    #[pyo3(signature = (wallet = None))]
    fn new_session(&self, wallet: Option<String>) -> String {
        self.manager.new_session_with_wallet(wallet)
    }

    /// Runs one turn and returns the turn result as a dict.
    fn ask(&self, py: Python<'_>, session_id: &str, text: &str) -> PyResult<Py<PyAny>> {
        let result = py.detach(|| self.manager.handle_turn(session_id, text)).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        to_py(py, &result)
    }

    /// The stage messages recorded for one turn.
    fn trace(&self, py: Python<'_>, session_id: &str, trace_id: &str) -> PyResult<Py<PyAny>> {
        let trace = self.manager.get_trace(session_id, trace_id).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        to_py(py, &trace)
    }
}

#[pymodule]
pub fn hcla(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Service>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    Ok(())
}
