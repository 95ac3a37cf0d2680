//! Python bindings: configuration, synthetic datasets, training, evaluation
//! and prediction, mirroring the `gisnet` CLI surface.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use gisnet::autodiff::Mode;
use gisnet::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, DatasetSplit, Sample, Scenario,
    SegmentStats,
};
use gisnet::graph::{build_star_adjacency, normalize_adjacency};
use gisnet::train::{
    cv_kalman_baseline, evaluate_rmse, evaluate_rmse_baseline, forward, load_checkpoint,
    mse_loss, save_checkpoint, train_loop, EvalReport, ModelParams,
};
use gisnet::RunConfig;

fn to_py_err(err: gisnet::Error) -> PyErr {
    match err {
        gisnet::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Pipeline configuration; see `Config.to_json()` for every field.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Full-size defaults (13x3 grid, 64-d embeddings, 128-d decoder).
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: RunConfig::default(),
        }
    }

    /// Miniature configuration for fast experiments.
    #[staticmethod]
    fn toy() -> Self {
        PyConfig {
            inner: RunConfig::toy(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    /// Compatibility hash embedded in caches, checkpoints and reports.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Replace one field by name, returning a new config.
    fn with_field(&self, key: &str, value: f64) -> PyResult<Self> {
        let mut json = serde_json::to_value(&self.inner).expect("config serializes");
        let map = json.as_object_mut().expect("object");
        let slot = map
            .get_mut(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown config key {key:?}")))?;
        *slot = if slot.is_u64() || slot.is_i64() {
            serde_json::json!(value as u64)
        } else {
            serde_json::json!(value)
        };
        let inner: RunConfig =
            serde_json::from_value(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(PyConfig { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(grid={}x{}, embed={}, decoder={}, hash={})",
            self.inner.grid_rows,
            self.inner.grid_cols,
            self.inner.embed_dim,
            self.inner.decoder_hidden,
            &self.inner.hash()[..12]
        )
    }
}

/// A train/val/test sample split plus the config it was built under.
#[pyclass(name = "Dataset")]
struct PyDataset {
    split: DatasetSplit,
    config: RunConfig,
    stats: SegmentStats,
}

impl PyDataset {
    fn part(&self, name: &str) -> PyResult<&[Sample]> {
        self.split
            .part(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown part {name:?} (train|val|test)")))
    }

    fn sample(&self, part: &str, index: usize) -> PyResult<&Sample> {
        let samples = self.part(part)?;
        samples.get(index).ok_or_else(|| {
            PyValueError::new_err(format!(
                "index {index} out of range for {} {part} samples",
                samples.len()
            ))
        })
    }
}

#[pymethods]
impl PyDataset {
    /// Generate synthetic scenes: scenario is one of
    /// cv | lane-change | congestion | crowded.
    #[staticmethod]
    fn synth(scenario: &str, scenes: usize, seed: u64, config: &PyConfig) -> PyResult<Self> {
        let scenario = Scenario::from_str(scenario).map_err(to_py_err)?;
        let data = generate_synthetic(scenario, scenes, seed, &config.inner).map_err(to_py_err)?;
        let split = split_dataset(
            data.samples,
            seed,
            (
                config.inner.split_train,
                config.inner.split_val,
                config.inner.split_test,
            ),
        )
        .map_err(to_py_err)?;
        Ok(PyDataset {
            split,
            config: config.inner.clone(),
            stats: data.stats,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (split, manifest) = load_dataset(&path).map_err(to_py_err)?;
        Ok(PyDataset {
            split,
            config: manifest.config,
            stats: manifest.segment_stats,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&path, &self.split, &self.config, self.stats)
            .map(|_| ())
            .map_err(to_py_err)
    }

    fn counts(&self) -> (usize, usize, usize) {
        (
            self.split.train.len(),
            self.split.val.len(),
            self.split.test.len(),
        )
    }

    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.config.clone(),
        }
    }

    /// Target history of one sample as [(x, y), ...] in meters.
    fn history(&self, part: &str, index: usize) -> PyResult<Vec<(f64, f64)>> {
        Ok(self.sample(part, index)?.target_history.frames().to_vec())
    }

    /// Ground-truth future of one sample, relative to the last observed
    /// position.
    fn future(&self, part: &str, index: usize) -> PyResult<Vec<(f64, f64)>> {
        Ok(self.sample(part, index)?.future.clone())
    }

    fn neighbor_count(&self, part: &str, index: usize) -> PyResult<usize> {
        Ok(self.sample(part, index)?.neighbors.len())
    }

    /// Constant-velocity Kalman prediction for one sample.
    fn cv_baseline(&self, part: &str, index: usize) -> PyResult<Vec<(f64, f64)>> {
        let sample = self.sample(part, index)?;
        let pred = cv_kalman_baseline(sample, &self.config).map_err(to_py_err)?;
        Ok(pred.frames().to_vec())
    }

    fn __len__(&self) -> usize {
        self.split.len()
    }

    fn __repr__(&self) -> String {
        let (t, v, e) = self.counts();
        format!("Dataset(train={t}, val={v}, test={e})")
    }
}

fn report_to_dict(py: Python<'_>, report: &EvalReport) -> PyResult<Py<PyAny>> {
    let dict = pyo3::types::PyDict::new(py);
    for (i, rmse) in report.rmse_by_horizon.iter().enumerate() {
        dict.set_item(i + 1, *rmse)?;
    }
    Ok(dict.into_any().unbind())
}

/// The full model: encoder, social pooling, GCN, decoder.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
    config: RunConfig,
}

#[pymethods]
impl PyModel {
    /// Fresh seeded initialization from the config.
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let params = ModelParams::init_seeded(&config.inner).map_err(to_py_err)?;
        Ok(PyModel {
            params,
            config: config.inner.clone(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, config: &PyConfig) -> PyResult<Self> {
        let (params, hash) = load_checkpoint(&path, &config.inner).map_err(to_py_err)?;
        if hash != config.inner.hash() {
            return Err(PyValueError::new_err(format!(
                "checkpoint config hash {} does not match supplied config {}",
                &hash[..12],
                &config.inner.hash()[..12]
            )));
        }
        Ok(PyModel {
            params,
            config: config.inner.clone(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.params, &self.config.hash()).map_err(to_py_err)
    }

    /// Train on the dataset's train split (validating on val when present);
    /// returns the per-epoch log as a list of dicts.
    fn train(&mut self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Py<PyAny>> {
        if dataset.config.hash() != self.config.hash() {
            return Err(PyValueError::new_err(
                "dataset and model were built under incompatible configs",
            ));
        }
        let outcome = train_loop(&dataset.split, &self.config, None, None).map_err(to_py_err)?;
        self.params = outcome.params;
        let log = pyo3::types::PyList::empty(py);
        for record in &outcome.log {
            let entry = pyo3::types::PyDict::new(py);
            entry.set_item("epoch", record.epoch)?;
            entry.set_item("train_loss", record.train_loss)?;
            if let Some(v) = record.val_rmse {
                entry.set_item("val_rmse", v.to_vec())?;
            }
            log.append(entry)?;
        }
        Ok(log.into_any().unbind())
    }

    /// RMSE per horizon (1..5 s) on one dataset part.
    fn evaluate(&mut self, py: Python<'_>, dataset: &PyDataset, part: &str) -> PyResult<Py<PyAny>> {
        let samples = dataset.part(part)?;
        let report = evaluate_rmse(samples, &mut self.params, &self.config).map_err(to_py_err)?;
        report_to_dict(py, &report)
    }

    /// RMSE per horizon for the CV Kalman baseline on the same part.
    #[staticmethod]
    fn evaluate_cv(py: Python<'_>, dataset: &PyDataset, part: &str) -> PyResult<Py<PyAny>> {
        let samples = dataset.part(part)?;
        let report = evaluate_rmse_baseline(samples, &dataset.config).map_err(to_py_err)?;
        report_to_dict(py, &report)
    }

    /// Predicted future for one sample, relative to its last observed
    /// position.
    fn predict(&mut self, dataset: &PyDataset, part: &str, index: usize) -> PyResult<Vec<(f64, f64)>> {
        let sample = dataset.sample(part, index)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand_chacha::rand_core::SeedableRng;
        let pred = forward(
            None,
            &mut self.params,
            sample,
            &self.config,
            Mode::Eval,
            &mut rng,
        )
        .map_err(to_py_err)?;
        Ok(pred.frames().to_vec())
    }

    /// Mean squared displacement between a prediction and a ground-truth
    /// future, meters^2.
    #[staticmethod]
    fn mse(prediction: Vec<(f64, f64)>, truth: Vec<(f64, f64)>) -> PyResult<f64> {
        let pred = gisnet::decoder::PredictedTrajectory::new(prediction).map_err(to_py_err)?;
        mse_loss(&pred, &truth).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(config_hash={})", &self.config.hash()[..12])
    }
}

/// Symmetric-normalized star adjacency D^(-1/2) (A+I) D^(-1/2) as a nested
/// list, for quick inspection from Python.
#[pyfunction]
fn star_adjacency(n: usize, target: usize) -> PyResult<Vec<Vec<f64>>> {
    let graph = build_star_adjacency(n, target).map_err(to_py_err)?;
    let s = normalize_adjacency(&graph);
    Ok((0..n)
        .map(|i| (0..n).map(|j| s.entry(i, j)).collect())
        .collect())
}

#[pymodule]
fn gisnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(star_adjacency, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
