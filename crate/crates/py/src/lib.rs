//! Python bindings: fixture creation, discovery helpers, difficulty scoring,
//! the end-to-end pipeline, evaluation and a thin database adapter.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyDict, PyFloat, PyInt, PyList, PyString};
use serde::Serialize;
use serde_json::{json, Value as Json};

use entforge_core::benchmark::{self, TASKS_FILE};
use entforge_core::config::load_config;
use entforge_core::db::{open_with_timeout, AdapterHandle, ExecOutcome, DEFAULT_TIMEOUT_MS};
use entforge_core::difficulty::{self, DifficultyScore, DifficultyWeights, Dimensions, Thresholds};
use entforge_core::discovery;
use entforge_core::fixture;
use entforge_core::pipeline;
use entforge_core::taskgen::Operation;
use entforge_core::value::{Blob, Value};

create_exception!(entforge, EntforgeError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    EntforgeError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Json) -> PyResult<PyObject> {
    Ok(match v {
        Json::Null => py.None(),
        Json::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Json::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any().unbind(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Json::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Json::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any().unbind()
        }
        Json::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn ser_py<T: Serialize>(py: Python<'_>, x: &T) -> PyResult<PyObject> {
    to_py(py, &serde_json::to_value(x).map_err(err)?)
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        Ok(Value::Null)
    } else if obj.is_instance_of::<PyBool>() {
        Ok(Value::Integer(i64::from(obj.extract::<bool>()?)))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(Value::Integer(obj.extract()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(Value::Real(obj.extract()?))
    } else if obj.is_instance_of::<PyString>() {
        Ok(Value::Text(obj.extract()?))
    } else if let Ok(b) = obj.downcast::<PyBytes>() {
        Ok(Value::Blob(Blob {
            blob: b.as_bytes().to_vec(),
        }))
    } else {
        Err(PyValueError::new_err(format!(
            "unsupported parameter type {}",
            obj.get_type().name()?
        )))
    }
}

fn outcome_py(py: Python<'_>, o: &ExecOutcome) -> PyResult<PyObject> {
    ser_py(py, o)
}

/// Writes the mini-CRM fixture database and its site config into `dir`.
/// Returns `(database_path, config_path)`.
#[pyfunction]
fn create_fixture(dir: PathBuf) -> PyResult<(String, String)> {
    let (db, cfg) = fixture::write_fixture(&dir).map_err(err)?;
    Ok((db.display().to_string(), cfg.display().to_string()))
}

#[pyfunction]
fn cache_key(tables: Vec<String>) -> String {
    discovery::cache_key(&tables)
}

#[pyfunction]
fn extract_features(py: Python<'_>, sql: &str) -> PyResult<PyObject> {
    ser_py(py, &difficulty::extract_features(sql).map_err(err)?)
}

fn weights_from(w: Option<[f64; 5]>) -> DifficultyWeights {
    match w {
        None => DifficultyWeights::default(),
        Some([w_table, w_rel, w_op, w_result, w_sql]) => DifficultyWeights {
            w_table,
            w_rel,
            w_op,
            w_result,
            w_sql,
        },
    }
}

/// Scores one statement. For mutations `rows` is the affected-row count and
/// `cols` should be 0. `weights` is `(w_table, w_rel, w_op, w_result, w_sql)`.
#[pyfunction]
#[pyo3(signature = (sql, rows, cols, weights=None, thresholds=(1.0, 2.0)))]
fn score(
    py: Python<'_>,
    sql: &str,
    rows: u64,
    cols: u64,
    weights: Option<[f64; 5]>,
    thresholds: (f64, f64),
) -> PyResult<PyObject> {
    let op = Operation::of_statement(sql)
        .ok_or_else(|| PyValueError::new_err("not a SELECT/INSERT/UPDATE/DELETE statement"))?;
    let f = difficulty::extract_features(sql).map_err(err)?;
    let th = Thresholds {
        medium: thresholds.0,
        hard: thresholds.1,
    };
    let s = DifficultyScore::from_dimensions(Dimensions::new(&f, op, rows, cols), weights_from(weights), th);
    ser_py(py, &s)
}

#[pyfunction]
#[pyo3(signature = (total, medium=1.0, hard=2.0))]
fn bucket(total: f64, medium: f64, hard: f64) -> &'static str {
    difficulty::bucket(total, Thresholds { medium, hard }).as_str()
}

/// Loads layered config files plus `key=value` overrides; returns the
/// effective configuration as a dict.
#[pyfunction]
#[pyo3(signature = (configs, overrides=Vec::new()))]
fn load(py: Python<'_>, configs: Vec<PathBuf>, overrides: Vec<String>) -> PyResult<PyObject> {
    ser_py(py, &load_config(&configs, &overrides).map_err(err)?)
}

/// Runs discover, generate and export; artifacts land in `out`.
#[pyfunction]
#[pyo3(signature = (configs, out, overrides=Vec::new(), jobs=4))]
fn run_all(
    py: Python<'_>,
    configs: Vec<PathBuf>,
    out: PathBuf,
    overrides: Vec<String>,
    jobs: usize,
) -> PyResult<PyObject> {
    let cfg = load_config(&configs, &overrides).map_err(err)?;
    let r = py.allow_threads(|| pipeline::run_all(&cfg, &out, jobs)).map_err(err)?;
    let summary = json!({
        "digest_before": r.digest_before,
        "digest_after": r.digest_after,
        "workflows": r.workflows,
        "attempted": r.attempted,
        "verified": r.verified,
        "exported": r.exported,
        "tasks_path": out.join(TASKS_FILE).display().to_string(),
        "manifest": serde_json::to_value(&r.manifest).map_err(err)?,
        "diagnostics": r.diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>(),
    });
    to_py(py, &summary)
}

/// Evaluates every task in `tasks_path` against `database`.
#[pyfunction]
#[pyo3(signature = (tasks_path, database, answers=None, self_check=false, engine="embedded_file_db"))]
fn evaluate(
    py: Python<'_>,
    tasks_path: PathBuf,
    database: &str,
    answers: Option<BTreeMap<u64, String>>,
    self_check: bool,
    engine: &str,
) -> PyResult<PyObject> {
    let tasks = benchmark::load_tasks(&tasks_path).map_err(err)?;
    let mut h = open_with_timeout(engine, database, DEFAULT_TIMEOUT_MS).map_err(err)?;
    let verdicts = pipeline::evaluate_all(&tasks, &answers.unwrap_or_default(), self_check, &mut h).map_err(err)?;
    ser_py(py, &verdicts)
}

/// The plain-text distribution report for an exported corpus.
#[pyfunction]
fn stats(tasks_path: PathBuf) -> PyResult<String> {
    Ok(benchmark::stats(&benchmark::load_tasks(&tasks_path).map_err(err)?).render())
}

/// A connection to one database.
#[pyclass(unsendable)]
struct Adapter {
    h: AdapterHandle,
}

#[pymethods]
impl Adapter {
    #[new]
    #[pyo3(signature = (database, engine="embedded_file_db", timeout_ms=DEFAULT_TIMEOUT_MS))]
    fn new(database: &str, engine: &str, timeout_ms: u64) -> PyResult<Self> {
        Ok(Self {
            h: open_with_timeout(engine, database, timeout_ms).map_err(err)?,
        })
    }

    #[pyo3(signature = (include=vec!["*".to_string()], exclude=Vec::new()))]
    fn list_nonempty_tables(&mut self, include: Vec<String>, exclude: Vec<String>) -> PyResult<Vec<(String, u64)>> {
        self.h.list_nonempty_tables(&include, &exclude).map_err(err)
    }

    fn describe_table(&mut self, py: Python<'_>, table: &str) -> PyResult<PyObject> {
        let (columns, fks) = self.h.describe_table(table).map_err(err)?;
        to_py(py, &json!({ "columns": columns, "foreign_keys": fks }))
    }

    #[pyo3(signature = (sql, params=Vec::new()))]
    fn execute(&mut self, py: Python<'_>, sql: &str, params: Vec<Bound<'_, PyAny>>) -> PyResult<PyObject> {
        let params = params.iter().map(to_value).collect::<PyResult<Vec<_>>>()?;
        outcome_py(py, &self.h.execute(sql, &params).map_err(err)?)
    }

    /// Runs `sql` inside a transaction that is always rolled back.
    #[pyo3(signature = (sql, params=Vec::new()))]
    fn execute_rollback(&mut self, py: Python<'_>, sql: &str, params: Vec<Bound<'_, PyAny>>) -> PyResult<PyObject> {
        let params = params.iter().map(to_value).collect::<PyResult<Vec<_>>>()?;
        outcome_py(py, &self.h.execute_rollback(sql, &params).map_err(err)?)
    }

    fn snapshot_digest(&mut self) -> PyResult<String> {
        self.h.snapshot_digest().map_err(err)
    }
}

#[pymodule]
fn entforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EntforgeError", m.py().get_type::<EntforgeError>())?;
    m.add("__version__", benchmark::TOOL_VERSION)?;
    m.add_class::<Adapter>()?;
    m.add_function(wrap_pyfunction!(create_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(cache_key, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(bucket, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    Ok(())
}
