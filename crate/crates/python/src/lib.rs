use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use deconfound::cloning::{self, Hyperparameters, PolicyModel, TrainConfig};
use deconfound::dataset::Dataset;
use deconfound::envs::{self, EnvKind, EnvSpec, InitMode};
use deconfound::independence::{hoeffding_d_slices, DEFAULT_GAMMA};
use deconfound::masking::{compute_mask, MaskConfig, ObservationMask, DEFAULT_HORIZON};
use deconfound::scm::fixtures::{fixture_by_name, SampleMode};

fn err(e: deconfound::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn spec(env: &str, mixing: f64) -> PyResult<EnvSpec> {
    let kind: EnvKind = env.parse().map_err(err)?;
    EnvSpec::of(kind).with_mixing(mixing).map_err(err)
}

fn bits(mask: &ObservationMask) -> Vec<u32> {
    mask.bits().iter().map(|&b| u32::from(b)).collect()
}

/// Hoeffding's D statistic between two equally long samples (n >= 5).
#[pyfunction]
fn hoeffding_d(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    Ok(hoeffding_d_slices(&x, &y).map_err(err)?.value())
}

/// A set of expert trajectories with its manifest.
#[pyclass(name = "Dataset", module = "deconfound", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Dataset::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// (state, observation, action) widths.
    #[getter]
    fn dims(&self) -> (u32, u32, u32) {
        let d = self.inner.dims();
        (d.state, d.obs, d.action)
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.manifest.source.clone()
    }

    /// States, observations and actions of trajectory `i` as nested lists.
    #[allow(clippy::type_complexity)]
    fn trajectory(&self, i: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let t = self
            .inner
            .trajectories
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("trajectory {i} out of range")))?;
        Ok((t.states.clone(), t.observations.clone(), t.actions.clone()))
    }

    /// Mask bits (1 = masked) for this dataset.
    #[pyo3(signature = (horizon = DEFAULT_HORIZON, gamma = DEFAULT_GAMMA))]
    fn compute_mask(&self, horizon: u32, gamma: f64) -> PyResult<Vec<u32>> {
        let (mask, _) = compute_mask(&self.inner, &MaskConfig::new(horizon, gamma)).map_err(err)?;
        Ok(bits(&mask))
    }
}

/// Expert demonstrations from `cartpole` or `reacher`.
#[pyfunction]
#[pyo3(signature = (env, n, seed = 0, init = "intervened", mixing = 0.0))]
fn generate(env: &str, n: usize, seed: u64, init: &str, mixing: f64) -> PyResult<PyDataset> {
    let spec = spec(env, mixing)?;
    let init: InitMode = init.parse().map_err(err)?;
    Ok(PyDataset { inner: envs::generate(&spec, &init, n, seed).map_err(err)? })
}

/// Samples from one of the small structural fixtures.
#[pyfunction]
#[pyo3(signature = (name, n, seed = 0, init = "intervened"))]
fn fixture_dataset(name: &str, n: usize, seed: u64, init: &str) -> PyResult<PyDataset> {
    let mode: SampleMode = init.parse().map_err(err)?;
    let f = fixture_by_name(name).map_err(err)?;
    Ok(PyDataset { inner: f.dataset(mode, n, seed).map_err(err)? })
}

/// A trained behavior-cloning policy.
#[pyclass(name = "Policy", module = "deconfound", frozen)]
struct PyPolicy {
    inner: PolicyModel,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: PolicyModel::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn mask(&self) -> Vec<u32> {
        bits(&self.inner.mask)
    }

    #[getter]
    fn history(&self) -> usize {
        self.inner.history
    }

    /// Action for observation frames ordered newest first.
    fn predict(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        if frames.len() != self.inner.history {
            return Err(PyValueError::new_err(format!("expected {} frames", self.inner.history)));
        }
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        Ok(self.inner.predict(&refs))
    }

    fn open_loop_mse(&self, data: &PyDataset) -> PyResult<f64> {
        self.inner.open_loop_mse(&data.inner).map_err(err)
    }

    /// Closed-loop losses of `rollouts` episodes from intervened initial states.
    #[pyo3(signature = (env, rollouts = cloning::DEFAULT_ROLLOUTS, seed = 0, mixing = 0.0))]
    fn evaluate(&self, env: &str, rollouts: usize, seed: u64, mixing: f64) -> PyResult<Vec<f64>> {
        let spec = spec(env, mixing)?;
        Ok(cloning::evaluate(&self.inner, &spec, rollouts, seed).map_err(err)?.losses)
    }
}

/// Fits a ridge or MLP policy; `mask` holds one 0/1 bit per observation coordinate.
#[pyfunction]
#[pyo3(signature = (data, mask = None, policy = "ridge", history = cloning::DEFAULT_HISTORY, l2 = cloning::DEFAULT_LAMBDA, seed = 0))]
fn train(data: &PyDataset, mask: Option<Vec<u32>>, policy: &str, history: usize, l2: f64, seed: u64) -> PyResult<PyPolicy> {
    let d_o = data.inner.dims().obs as usize;
    let mask = match mask {
        None => ObservationMask::none(d_o),
        Some(bits) if bits.len() == d_o => ObservationMask::new(bits.iter().map(|&b| b != 0).collect()),
        Some(bits) => return Err(PyValueError::new_err(format!("mask has {} bits, expected {d_o}", bits.len()))),
    };
    let hyperparameters = match policy {
        "ridge" => Hyperparameters::Ridge { lambda: l2 },
        "mlp" => Hyperparameters::mlp(seed),
        other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    };
    let cfg = TrainConfig { history, hyperparameters };
    Ok(PyPolicy { inner: cloning::train(&data.inner, &mask, &cfg).map_err(err)? })
}

#[pymodule]
#[pyo3(name = "deconfound")]
pub fn deconfound_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(hoeffding_d, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
