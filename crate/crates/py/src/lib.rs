//! Python bindings for the doubly-robust estimation pipeline.
//!
//! The compiled module is named `drcf` and mirrors the CLI: generate a
//! synthetic dataset, cross-fit nuisance models to score it, then read
//! estimates off the result or compare two results. Configs cross the
//! boundary as dicts (or JSON strings) shaped like the corresponding
//! sections of the CLI run config; outputs come back as plain dicts and
//! lists built from the same serialization the CLI writes to disk, so a
//! result saved here can be inspected with `drcf inspect scores` and
//! vice versa.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};

use drcf_core::crossfit::{run_crossfit, CrossfitConfig, CrossfitResult};
use drcf_core::data::{load_dataset, ColumnSchema, Dataset as CoreDataset, OutcomeBounds};
use drcf_core::dr::Estimand;
use drcf_core::report::{compare_runs, CompareOptions};
use drcf_core::synthetic::{
    generate as generate_core, oracle_estimands, write_dataset_csv, write_dataset_jsonl,
    SyntheticConfig,
};
use drcf_core::textfeat::EMBED_TOKEN_ENV;
use drcf_core::Error;

/// Config and data mistakes become `ValueError`; everything else
/// (numeric trouble, provider failures, broken invariants) surfaces as
/// `RuntimeError`.
fn core_err(err: Error) -> PyErr {
    match &err {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::Schema(_)
        | Error::Validation { .. }
        | Error::EmptyDataset
        | Error::Coverage(_)
        | Error::Comparison(_) => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64()
                    .ok_or_else(|| PyValueError::new_err(format!("unrepresentable number {n}")))?
                    .into_pyobject(py)?
                    .into_any()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// Serializes any core type and rebuilds it as Python dicts and lists.
fn to_py_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyRuntimeError::new_err(format!("serialization failed: {e}")))?;
    Ok(json_to_py(py, &json)?.unbind())
}

/// Parses a config from a dict or a JSON string.
fn parse_config<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text = if let Ok(s) = obj.cast::<PyString>() {
        s.to_string()
    } else {
        // Dicts (or anything else the json module accepts) round-trip
        // through a dump, so nested configs need no special handling.
        obj.py()
            .import("json")?
            .call_method1("dumps", (obj,))?
            .extract::<String>()?
    };
    serde_json::from_str(&text)
        .map_err(|e| PyValueError::new_err(format!("invalid {what} config: {e}")))
}

fn config_or_default<T: serde::de::DeserializeOwned + Default>(
    obj: Option<&Bound<'_, PyAny>>,
    what: &str,
) -> PyResult<T> {
    match obj {
        Some(obj) => parse_config(obj, what),
        None => Ok(T::default()),
    }
}

/// Column layout of files produced by `generate`: fixed roles, every
/// leftover column a feature, so it loads them at any feature count.
fn synthetic_file_schema() -> ColumnSchema {
    ColumnSchema {
        id_col: Some("id".into()),
        outcome_col: "y".into(),
        treatment_col: "t".into(),
        group_col: Some("grp".into()),
        text_col: Some("desc".into()),
        feature_cols: None,
        outcome_bounds: OutcomeBounds::Unit,
    }
}

/// An observational dataset held in memory.
#[pyclass(frozen)]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// Loads a CSV or JSONL file. Without a schema the synthetic file
    /// layout (`id`, `y`, `t`, `grp`, `desc`, features) is assumed.
    #[staticmethod]
    #[pyo3(signature = (path, schema=None))]
    fn load(path: PathBuf, schema: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let schema = match schema {
            Some(obj) => parse_config(obj, "schema")?,
            None => synthetic_file_schema(),
        };
        let inner = load_dataset(&path, &schema).map_err(core_err)?;
        Ok(Self { inner })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        write_dataset_csv(&self.inner, &path).map_err(core_err)
    }

    fn save_jsonl(&self, path: PathBuf) -> PyResult<()> {
        write_dataset_jsonl(&self.inner, &path).map_err(core_err)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn n_treated(&self) -> usize {
        self.inner.units.iter().filter(|u| u.treatment).count()
    }

    fn __len__(&self) -> usize {
        self.inner.units.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_units={}, n_features={}, modality={:?})",
            self.inner.units.len(),
            self.inner.feature_names.len(),
            self.inner.modality,
        )
    }
}

/// Scores, estimates, and fold diagnostics from one cross-fitted run.
#[pyclass(frozen)]
pub struct FitResult {
    inner: CrossfitResult,
}

impl FitResult {
    fn find_estimate(&self, py: Python<'_>, want: fn(&Estimand) -> bool) -> PyResult<Py<PyAny>> {
        let est = self
            .inner
            .estimates
            .iter()
            .find(|e| want(&e.estimand))
            .ok_or_else(|| PyRuntimeError::new_err("estimate missing from result"))?;
        to_py_object(py, est)
    }
}

#[pymethods]
impl FitResult {
    /// Reads a result directory written by `save` or the CLI.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = CrossfitResult::load_dir(&dir).map_err(core_err)?;
        Ok(Self { inner })
    }

    /// Writes `scores.csv`, `estimates.json`, `blp.json`, and
    /// `manifest.json` into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_dir(&dir).map_err(core_err)
    }

    fn ate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.find_estimate(py, |e| matches!(e, Estimand::Ate))
    }

    fn atet(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.find_estimate(py, |e| matches!(e, Estimand::Atet))
    }

    /// Group label -> estimate dict, over the groups that were large
    /// enough to report.
    fn gates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let dict = PyDict::new(py);
        for est in &self.inner.estimates {
            if let Estimand::Gate { group } = &est.estimand {
                dict.set_item(group, to_py_object(py, est)?)?;
            }
        }
        Ok(dict)
    }

    fn estimates(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_object(py, &self.inner.estimates)
    }

    /// One dict per unit, in dataset order.
    fn scores(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_object(py, &self.inner.score_rows)
    }

    /// Per-unit calibrated effects, in dataset order.
    fn cate(&self) -> Vec<f64> {
        self.inner.score_rows.iter().map(|r| r.cate).collect()
    }

    fn blp(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_object(py, &self.inner.blp_per_fold)
    }

    fn manifest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_object(py, &self.inner.manifest)
    }

    fn __len__(&self) -> usize {
        self.inner.score_rows.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(n_units={}, k_folds={}, n_estimates={})",
            self.inner.score_rows.len(),
            self.inner.manifest.config.k_folds,
            self.inner.estimates.len(),
        )
    }
}

/// Draws a synthetic dataset and returns it with its ground truth.
///
/// The truth dict carries the finite-population `ate`, `atet`, `gate`
/// (label -> effect), per-unit `cate`, and the true `nuisances`
/// (`g1`, `g0`, `mu`), all aligned with the dataset.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<(Dataset, Py<PyAny>)> {
    let config: SyntheticConfig = config_or_default(config, "synthetic")?;
    let (dataset, truth) = generate_core(&config).map_err(core_err)?;
    let oracle = oracle_estimands(&dataset, &truth).map_err(core_err)?;

    let mut value = serde_json::to_value(&oracle)
        .map_err(|e| PyRuntimeError::new_err(format!("serialization failed: {e}")))?;
    let nuisances = serde_json::json!({
        "g1": truth.g1, "g0": truth.g0, "mu": truth.mu,
    });
    value
        .as_object_mut()
        .expect("oracle estimands serialize to an object")
        .insert("nuisances".into(), nuisances);

    let truth_obj = json_to_py(py, &value)?.unbind();
    Ok((Dataset { inner: dataset }, truth_obj))
}

/// Cross-fits nuisance models on `dataset` and scores every unit.
#[pyfunction]
#[pyo3(signature = (dataset, config=None))]
fn fit(
    py: Python<'_>,
    dataset: &Dataset,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<FitResult> {
    let config: CrossfitConfig = config_or_default(config, "crossfit")?;
    let data = &dataset.inner;
    // Training can take a while; let other Python threads run.
    let inner = py.detach(|| run_crossfit(data, &config)).map_err(core_err)?;
    Ok(FitResult { inner })
}

/// Compares two fitted runs; returns the same metrics dict the CLI
/// writes to `metrics.json` (rank agreement, curve overlap, lift).
#[pyfunction]
#[pyo3(signature = (a, b, options=None))]
fn compare(
    py: Python<'_>,
    a: &FitResult,
    b: &FitResult,
    options: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let options: CompareOptions = config_or_default(options, "report")?;
    let comparison = compare_runs(&a.inner, &b.inner, &options).map_err(core_err)?;
    to_py_object(py, &comparison)
}

#[pymodule]
fn drcf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<FitResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("EMBED_TOKEN_ENV", EMBED_TOKEN_ENV)?;
    Ok(())
}
