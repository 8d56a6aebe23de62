//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from the core types' JSON form.

use std::sync::Arc;

use attnguard_core::concord::{concordance, concordance_replayed, CompatConfig};
use attnguard_core::engine::{EngineConfig, OverrideCmd};
use attnguard_core::features::{session_features as featurize_trace, FeatureVector, FEATURE_COUNT};
use attnguard_core::forest::{feature_importances, predict_proba, train, ForestConfig, ForestModel};
use attnguard_core::service::{parse_log, Session as CoreSession, SessionMode};
use attnguard_core::signal::{parse_trace, AttentionState};
use attnguard_core::sim::{generate_trace as gen_trace, parse_truth, truth_samples, SimProfile};
use attnguard_core::stats::{self, Alternative};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_str_enum<T: DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(err)
}

fn alternative(s: &str) -> PyResult<Alternative> {
    from_str_enum(&s.replace('-', "_"))
}

/// Generates a synthetic session. Returns `(events_jsonl, truth_jsonl)`,
/// the latter holding the true state at every 30-second step.
#[pyfunction]
#[pyo3(signature = (duration_s, seed, session_id="sim", profile_toml=None))]
fn generate_trace(
    duration_s: u64,
    seed: u64,
    session_id: &str,
    profile_toml: Option<&str>,
) -> PyResult<(String, String)> {
    let profile = match profile_toml {
        Some(t) => SimProfile::from_toml(t).map_err(err)?,
        None => SimProfile::default(),
    };
    let trace = gen_trace(&profile, duration_s, seed, session_id).map_err(err)?;
    Ok((trace.events_jsonl(), trace.truth_jsonl()))
}

/// Per-window feature vectors of a complete trace, after calibration.
#[pyfunction]
fn session_features<'py>(py: Python<'py>, events_jsonl: &str) -> PyResult<Bound<'py, PyAny>> {
    let events = parse_trace(events_jsonl).map_err(err)?;
    let sf = featurize_trace(&events).map_err(err)?;
    let text = attnguard_core::features::write_features(&sf.features);
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(err)?;
    to_py(py, &rows)
}

/// A trained decision forest.
#[pyclass(frozen)]
struct Model {
    inner: Arc<ForestModel>,
}

#[pymethods]
impl Model {
    /// Trains on `(events_jsonl, truth_jsonl)` pairs as written by the
    /// simulator.
    #[staticmethod]
    #[pyo3(signature = (sessions, n_trees=100, seed=0))]
    fn train(sessions: Vec<(String, String)>, n_trees: usize, seed: u64) -> PyResult<Self> {
        let mut data = Vec::new();
        for (events, truth) in &sessions {
            let events = parse_trace(events).map_err(err)?;
            let truth = parse_truth(truth).map_err(err)?;
            data.extend(truth_samples(&events, &truth).map_err(err)?);
        }
        let cfg = ForestConfig {
            n_trees,
            ..ForestConfig::default()
        };
        let model = train(&data, &cfg, seed).map_err(err)?;
        Ok(Model { inner: Arc::new(model) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = ForestModel::from_json(text).map_err(err)?;
        Ok(Model { inner: Arc::new(model) })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    /// Mean impurity decrease per feature, in feature order.
    fn feature_importances(&self) -> Vec<f64> {
        feature_importances(&self.inner).to_vec()
    }

    /// Classifies one window given its ten robust-z deviations.
    #[pyo3(signature = (values, t_ms=0))]
    fn predict<'py>(&self, py: Python<'py>, values: Vec<f64>, t_ms: u64) -> PyResult<Bound<'py, PyAny>> {
        let values: [f64; FEATURE_COUNT] = values
            .try_into()
            .map_err(|v: Vec<f64>| err(format!("expected {FEATURE_COUNT} values, got {}", v.len())))?;
        let est = predict_proba(&self.inner, &FeatureVector::new(t_ms, values)).map_err(err)?;
        to_py(py, &est)
    }
}

/// One live session: events in, estimates and directives out.
#[pyclass]
struct Session {
    inner: CoreSession,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (model, mode="auto", session_id="py", engine_seed=0))]
    fn new(model: &Model, mode: &str, session_id: &str, engine_seed: u64) -> PyResult<Self> {
        let mode = SessionMode::parse(mode).map_err(err)?;
        let engine = EngineConfig {
            seed: engine_seed,
            ..EngineConfig::default()
        };
        let inner = CoreSession::new(session_id, mode, None, model.inner.clone(), engine, 0).map_err(err)?;
        Ok(Session { inner })
    }

    /// Ingests a JSONL batch. Returns the ingest report.
    fn ingest<'py>(&mut self, py: Python<'py>, events_jsonl: &str) -> PyResult<Bound<'py, PyAny>> {
        let report = self.inner.ingest_jsonl(events_jsonl).map_err(err)?;
        to_py(py, &report)
    }

    /// Applies `set_state` (with `state`), `pause`, `resume`, `disable` or
    /// `enable`.
    #[pyo3(name = "override", signature = (cmd, state=None))]
    fn apply_override<'py>(&mut self, py: Python<'py>, cmd: &str, state: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let state: Option<AttentionState> = state.map(from_str_enum).transpose()?;
        let cmd = OverrideCmd::parse(cmd, state).map_err(err)?;
        let ack = self.inner.apply_override(cmd).map_err(err)?;
        to_py(py, &ack)
    }

    fn end(&mut self) {
        self.inner.end();
    }

    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status().as_str()
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.snapshot())
    }

    fn estimates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.estimates())
    }

    fn directives<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.directives())
    }

    fn export_log(&self) -> PyResult<String> {
        self.inner.export_log().map_err(err)
    }
}

/// Wizard/shadow agreement for a session log. With `model`, the shadow
/// estimates are recomputed by replaying the log.
#[pyfunction]
#[pyo3(signature = (log_jsonl, compat_toml=None, model=None))]
fn concord<'py>(
    py: Python<'py>,
    log_jsonl: &str,
    compat_toml: Option<&str>,
    model: Option<&Model>,
) -> PyResult<Bound<'py, PyAny>> {
    let records = parse_log(log_jsonl).map_err(err)?;
    let compat = match compat_toml {
        Some(t) => CompatConfig::from_toml(t).map_err(err)?,
        None => CompatConfig::default(),
    }
    .matrix();
    let report = match model {
        Some(m) => concordance_replayed(&records, m.inner.clone(), EngineConfig::default(), &compat),
        None => concordance(&records, &compat),
    }
    .map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn cohen_kappa(table: Vec<Vec<u64>>) -> PyResult<f64> {
    let rows: Vec<&[u64]> = table.iter().map(Vec::as_slice).collect();
    stats::kappa_from_rows(&rows).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (diffs, alternative="two_sided"))]
fn wilcoxon_signed_rank<'py>(py: Python<'py>, diffs: Vec<f64>, alternative: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = stats::wilcoxon_signed_rank(&diffs, self::alternative(alternative)?).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (a, b, alternative="two_sided"))]
fn mann_whitney_u<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alternative: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = stats::mann_whitney_u(&a, &b, self::alternative(alternative)?).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn roc_auc(scores_pos: Vec<f64>, scores_neg: Vec<f64>) -> PyResult<f64> {
    stats::roc_auc(&scores_pos, &scores_neg).map_err(err)
}

#[pyfunction]
fn pearson_r(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::pearson_r(&x, &y).map_err(err)
}

#[pymodule]
fn attnguard(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("STATES", AttentionState::ALL.map(|s| s.as_str()).to_vec())?;
    m.add_class::<Model>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(session_features, m)?)?;
    m.add_function(wrap_pyfunction!(concord, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    Ok(())
}
