//! Python module `mpart`: the streaming engine, the Fuzzy ART primitives
//! and the benchmark harness. Structured values cross the boundary as
//! plain dicts and lists.

use mpart_core::datasets::Dataset;
use mpart_core::engine::{Oracle, OracleAnswer, PendingQuery};
use mpart_core::graph;
use mpart_core::harness::{run_benchmark, train_run, TrainRun};
use mpart_core::{ClassId, FeatureVector, RunConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: mpart_core::Error) -> PyErr {
    use mpart_core::Error as E;
    match e {
        E::State(_) | E::Oracle { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn config(obj: Option<&Bound<'_, PyAny>>) -> PyResult<RunConfig> {
    let cfg: RunConfig = match obj {
        Some(o) if !o.is_none() => from_py(o)?,
        _ => RunConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn features(values: Vec<f64>) -> PyResult<FeatureVector> {
    FeatureVector::new(values).map_err(err)
}

/// `[r, 1 - r]`.
#[pyfunction]
fn complement_code(r: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(graph::complement_code(&features(r)?).as_slice().to_vec())
}

/// Match degree of the complement-coded `r` against `weight`.
#[pyfunction]
fn match_degree(r: Vec<f64>, weight: Vec<f64>) -> PyResult<f64> {
    graph::match_degree(&graph::complement_code(&features(r)?), &weight).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (r, weight, alpha = 0.01))]
fn choice_value(r: Vec<f64>, weight: Vec<f64>, alpha: f64) -> PyResult<f64> {
    graph::choice_value(&graph::complement_code(&features(r)?), &weight, alpha).map_err(err)
}

/// Configuration dict with every key at its default.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &RunConfig::default())
}

/// The configured dataset as a list of `{id, features, label}` dicts.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn generate<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let data = py.detach(|| Dataset::from_config(&cfg)).map_err(err)?;
    to_py(py, &data.samples)
}

/// One training stream with the dataset oracle.
#[pyfunction]
#[pyo3(signature = (config = None, trial = 0))]
fn train<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
    trial: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let run = py
        .detach(|| Dataset::from_config(&cfg).and_then(|d| train_run(&cfg, &d, trial, false)))
        .map_err(err)?;
    let TrainRun {
        seed,
        engine,
        output,
    } = run;
    let summary = serde_json::json!({
        "seed": seed,
        "samples": engine.t(),
        "accuracy": output.curve.last().map(|c| c.1),
        "curve": output.curve,
        "queries": output.queries,
        "label_counts": output.label_counts,
        "nodes": engine.graph().len(),
        "hash": engine.graph().state_hash(),
    });
    to_py(py, &summary)
}

/// Repeated trials; returns `{summary, trials}`.
#[pyfunction(name = "bench")]
#[pyo3(signature = (config = None))]
fn run_bench<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let report = py.detach(|| run_benchmark(&cfg)).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({"summary": report.summary, "trials": report.trials}),
    )
}

/// Answers with a label supplied by the caller.
struct Given(Option<ClassId>);

impl Oracle for Given {
    fn answer(&mut self, _query: &PendingQuery) -> mpart_core::Result<OracleAnswer> {
        Ok(self.0.map_or(OracleAnswer::Skip, OracleAnswer::Label))
    }
}

/// Streaming engine. Queries raised by `observe` stay pending until
/// `answer` is called.
#[pyclass(module = "mpart")]
struct Engine {
    inner: mpart_core::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (dims, config = None, seed = 0))]
    fn new(dims: usize, config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let cfg = self::config(config)?;
        Ok(Engine {
            inner: mpart_core::Engine::from_config(&cfg, dims, seed).map_err(err)?,
        })
    }

    #[pyo3(signature = (sample, features, label = None))]
    fn observe<'py>(
        &mut self,
        py: Python<'py>,
        sample: u64,
        features: Vec<f64>,
        label: Option<u32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let record = self
            .inner
            .observe(sample, &self::features(features)?, label.map(ClassId))
            .map_err(err)?;
        to_py(py, &record)
    }

    /// Resolves the pending query; `label=None` skips it.
    #[pyo3(signature = (sample, label = None))]
    fn answer(&mut self, sample: u64, label: Option<u32>) -> PyResult<()> {
        let answer = label.map_or(OracleAnswer::Skip, |c| OracleAnswer::Label(ClassId(c)));
        self.inner.answer(sample, answer).map_err(err)
    }

    /// `observe` followed by answering any query with `label`.
    fn process<'py>(
        &mut self,
        py: Python<'py>,
        sample: u64,
        features: Vec<f64>,
        label: Option<u32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let label = label.map(ClassId);
        let record = self
            .inner
            .process_sample(sample, &self::features(features)?, label, &mut Given(label))
            .map_err(err)?;
        to_py(py, &record)
    }

    /// `(prediction, p)`; prediction is a class id or `"unlabeled"`.
    fn classify<'py>(
        &self,
        py: Python<'py>,
        features: Vec<f64>,
    ) -> PyResult<(Bound<'py, PyAny>, Vec<f64>)> {
        let (pred, p) = self
            .inner
            .classify(&self::features(features)?)
            .map_err(err)?;
        Ok((to_py(py, &pred)?, p))
    }

    #[getter]
    fn pending<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.pending())
    }

    #[getter]
    fn t(&self) -> u64 {
        self.inner.t()
    }

    #[getter]
    fn queries(&self) -> u64 {
        self.inner.queries()
    }

    #[getter]
    fn skipped(&self) -> u64 {
        self.inner.skipped()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.graph().len()
    }

    #[getter]
    fn classes(&self) -> Vec<u32> {
        self.inner.graph().classes().iter().map(|c| c.0).collect()
    }

    fn state_hash(&self) -> String {
        self.inner.graph().state_hash()
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.graph().snapshot())
    }

    fn __repr__(&self) -> String {
        format!(
            "Engine(t={}, nodes={}, classes={}, queries={})",
            self.inner.t(),
            self.inner.graph().len(),
            self.inner.graph().classes().len(),
            self.inner.queries()
        )
    }
}

#[pymodule]
pub fn mpart(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(complement_code, m)?)?;
    m.add_function(wrap_pyfunction!(match_degree, m)?)?;
    m.add_function(wrap_pyfunction!(choice_value, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
