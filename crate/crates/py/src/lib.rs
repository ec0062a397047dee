//! Python bindings for the DPLAN anomaly detection library.
//!
//! Build with `cargo build --release -p dplan-py`, then copy (or symlink)
//! the produced `libdplan_py.so` next to your script as `dplan_py.so`.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use dplan_core::agent::{self, TrainConfig};
use dplan_core::data::{self, Partition, ScenarioSpec, Schema};
use dplan_core::eval::{self, LabeledScores};
use dplan_core::iforest;
use dplan_core::nn::{self, QNetwork};
use dplan_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A prepared training/test split with preprocessed features.
#[pyclass]
struct Scenario {
    dataset: data::Dataset,
}

#[pymethods]
impl Scenario {
    /// Build a scenario from a raw CSV, a schema JSON, and a spec JSON,
    /// optionally persisting it to `out_dir`.
    #[staticmethod]
    #[pyo3(signature = (data_csv, schema_json, spec_json, out_dir=None))]
    fn prep(
        data_csv: PathBuf,
        schema_json: PathBuf,
        spec_json: PathBuf,
        out_dir: Option<PathBuf>,
    ) -> PyResult<Scenario> {
        let schema = Schema::from_json_file(&schema_json).map_err(to_py_err)?;
        let table = data::load_csv(&data_csv, &schema).map_err(to_py_err)?;
        let text = std::fs::read_to_string(&spec_json)?;
        let spec: ScenarioSpec =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let dataset = data::make_scenario(&table, &spec).map_err(to_py_err)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(&dir)?;
            data::save_scenario(&dir, &dataset).map_err(to_py_err)?;
        }
        Ok(Scenario { dataset })
    }

    /// Load a scenario previously written by `prep` (or the CLI).
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Scenario> {
        let dataset = data::load_scenario(&dir).map_err(to_py_err)?;
        Ok(Scenario { dataset })
    }

    fn n_rows(&self) -> usize {
        self.dataset.n_rows()
    }

    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn test_indices(&self) -> Vec<usize> {
        self.dataset.test_indices()
    }

    /// Per-row anomaly flags from the ground truth.
    fn is_anomaly(&self) -> Vec<bool> {
        self.dataset
            .class_of
            .iter()
            .map(|c| c.is_anomaly())
            .collect()
    }

    fn features(&self, row: usize) -> PyResult<Vec<f64>> {
        self.dataset
            .features
            .get(row)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("row {row} out of range")))
    }
}

/// A trained Q-network detector.
#[pyclass]
struct Model {
    net: QNetwork,
    stats: data::PreprocessStats,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let (net, stats) = nn::load_model(Path::new(&path)).map_err(to_py_err)?;
        Ok(Model { net, stats })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_model(Path::new(&path), &self.net, &self.stats).map_err(to_py_err)
    }

    /// Anomaly score of one preprocessed feature vector.
    fn score(&self, features: Vec<f64>) -> PyResult<f64> {
        agent::anomaly_score(&self.net, &features).map_err(to_py_err)
    }

    /// (row, score) pairs over the scenario's test partition.
    fn score_test(&self, scenario: &Scenario) -> PyResult<Vec<(usize, f64)>> {
        agent::score_dataset(&self.net, &scenario.dataset, Partition::Test).map_err(to_py_err)
    }
}

/// Train a detector on a scenario. `config_json` is a JSON string with any
/// subset of the training-config fields; flags mirror the CLI ablations.
#[pyfunction]
#[pyo3(signature = (scenario, config_json=None, seed=None, erew=false, renv=false, deep=false))]
fn train(
    scenario: &Scenario,
    config_json: Option<&str>,
    seed: Option<u64>,
    erew: bool,
    renv: bool,
    deep: bool,
) -> PyResult<Model> {
    let mut cfg: TrainConfig = match config_json {
        Some(text) => {
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.disable_intrinsic |= erew;
    cfg.random_environment |= renv;
    cfg.deep_arch |= deep;
    let (net, _log) = agent::train(&scenario.dataset, &cfg).map_err(to_py_err)?;
    Ok(Model {
        net,
        stats: scenario.dataset.stats.clone(),
    })
}

/// Isolation forest fitted on raw feature rows.
#[pyclass]
struct IsolationForest {
    forest: iforest::IsolationForest,
}

#[pymethods]
impl IsolationForest {
    #[staticmethod]
    #[pyo3(signature = (data, n_trees=100, subsample=256, seed=0))]
    fn fit(
        data: Vec<Vec<f64>>,
        n_trees: usize,
        subsample: usize,
        seed: u64,
    ) -> PyResult<IsolationForest> {
        let forest =
            iforest::IsolationForest::fit(&data, n_trees, subsample, seed).map_err(to_py_err)?;
        Ok(IsolationForest { forest })
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.forest.score(&x).map_err(to_py_err)
    }

    fn score_all(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.forest.score_all(&data).map_err(to_py_err)
    }
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, is_anomaly: Vec<bool>) -> PyResult<f64> {
    let ls = LabeledScores::new(scores, is_anomaly).map_err(to_py_err)?;
    eval::auc_roc(&ls).map_err(to_py_err)
}

#[pyfunction]
fn auc_pr(scores: Vec<f64>, is_anomaly: Vec<bool>) -> PyResult<f64> {
    let ls = LabeledScores::new(scores, is_anomaly).map_err(to_py_err)?;
    eval::auc_pr(&ls).map_err(to_py_err)
}

#[pymodule]
fn dplan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Model>()?;
    m.add_class::<IsolationForest>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    Ok(())
}
