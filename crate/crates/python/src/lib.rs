//! Python bindings: tensors, projection, config, the model, baselines and metrics.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use deproj_core::baselines::LinearGaussianModel;
use deproj_core::checkpoint::Container;
use deproj_core::config::Config;
use deproj_core::data::{read_idx, Pair};
use deproj_core::model::{self, DiagonalGaussian, Model, ModelConfig, Variant};
use deproj_core::rng::{self, Purpose};
use deproj_core::trainer::Checkpoint;

fn err(e: deproj_core::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.code()))
}

/// Dense `f32` tensor, row-major.
#[pyclass(name = "Tensor", module = "pydeproj", from_py_object)]
#[derive(Clone)]
struct PyTensor(deproj_core::Tensor<f32>);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        deproj_core::Tensor::new(shape, data).map(PyTensor).map_err(err)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        deproj_core::Tensor::zeros(shape).map(PyTensor).map_err(err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.numel()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

/// Weights applied along one axis of a signal.
#[pyclass(name = "ProjectionSpec", module = "pydeproj", skip_from_py_object)]
#[derive(Clone)]
struct PyProjectionSpec(deproj_core::ProjectionSpec);

#[pymethods]
impl PyProjectionSpec {
    #[new]
    fn new(axis: usize, weights: Vec<f32>) -> PyResult<Self> {
        deproj_core::ProjectionSpec::new(axis, weights)
            .map(PyProjectionSpec)
            .map_err(err)
    }

    #[staticmethod]
    fn averaging(axis: usize, extent: usize) -> PyResult<Self> {
        deproj_core::ProjectionSpec::averaging(axis, extent)
            .map(PyProjectionSpec)
            .map_err(err)
    }

    #[getter]
    fn axis(&self) -> usize {
        self.0.axis()
    }

    #[getter]
    fn weights(&self) -> Vec<f32> {
        self.0.weights().to_vec()
    }
}

#[pyfunction]
fn project(signal: &PyTensor, spec: &PyProjectionSpec) -> PyResult<PyTensor> {
    deproj_core::project(&signal.0, &spec.0).map(PyTensor).map_err(err)
}

/// Validated key=value configuration.
#[pyclass(name = "Config", module = "pydeproj", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(Config);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Config::parse(text).map(PyConfig).map_err(err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.0.set(key, value).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        if !deproj_core::config::SCHEMA.iter().any(|(k, _, _)| *k == key) {
            return Err(PyValueError::new_err(format!("config: unknown key `{key}`")));
        }
        Ok(self.0.get(key).to_string())
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    fn normalized(&self) -> String {
        self.0.normalized()
    }
}

/// Conditional model (or its latent-free variant) with parameters.
#[pyclass(name = "Model", module = "pydeproj")]
struct PyModel(Model);

#[pymethods]
impl PyModel {
    /// Fresh seeded model for `[C, ...]` signals collapsed along `axis`.
    #[new]
    #[pyo3(signature = (signal_shape, axis, seed = 0, variant = "cvae", latent_dim = None))]
    fn new(
        signal_shape: Vec<usize>,
        axis: usize,
        seed: u64,
        variant: &str,
        latent_dim: Option<usize>,
    ) -> PyResult<Self> {
        let mut cfg = ModelConfig::for_signal(signal_shape, axis);
        cfg.variant = Variant::parse(variant).map_err(err)?;
        if let Some(l) = latent_dim {
            cfg.latent_dim = l;
        }
        Model::new(cfg, seed).map(PyModel).map_err(err)
    }

    #[staticmethod]
    fn from_config(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::from_config(&config.0).map_err(err)?;
        Model::new(cfg, seed).map(PyModel).map_err(err)
    }

    /// Reads the model out of a training checkpoint.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path).map(|c| PyModel(c.model)).map_err(err)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.to_container().save(&path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.config().variant.name()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.config().latent_dim
    }

    #[getter]
    fn signal_shape(&self) -> Vec<usize> {
        self.0.config().signal_shape.clone()
    }

    #[getter]
    fn projection_shape(&self) -> Vec<usize> {
        self.0.config().projection_shape()
    }

    fn num_parameters(&self) -> usize {
        self.0.params().numel()
    }

    /// `(mean, log_var)` of the prior over the latent given `x`.
    fn prior(&self, x: &PyTensor) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let g = self.0.prior_encode(&x.0).map_err(err)?;
        Ok((g.mean().to_vec(), g.log_var().to_vec()))
    }

    fn posterior(&self, y: &PyTensor) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let g = self.0.posterior_encode(&y.0).map_err(err)?;
        Ok((g.mean().to_vec(), g.log_var().to_vec()))
    }

    #[pyo3(signature = (x, z = None))]
    fn deproject(&self, x: &PyTensor, z: Option<Vec<f32>>) -> PyResult<PyTensor> {
        let z = z.unwrap_or_default();
        self.0.deproject(&x.0, &z).map(PyTensor).map_err(err)
    }

    /// `n` candidate signals for `x` from the evaluation stream `(seed, index)`.
    #[pyo3(signature = (x, n, seed = 0, index = 0))]
    fn sample(&self, py: Python<'_>, x: &PyTensor, n: usize, seed: u64, index: u64) -> PyResult<Vec<PyTensor>> {
        let model = &self.0;
        let x = &x.0;
        py.detach(|| {
            let mut r = rng::stream(seed, Purpose::Eval, index);
            model.sample(x, n, &mut r)
        })
        .map(|v| v.into_iter().map(PyTensor).collect())
        .map_err(err)
    }

    /// `(total, recon, kl)` for one pair and one noise draw.
    fn loss(&self, x: &PyTensor, y: &PyTensor, eps: Vec<f32>, beta: f32) -> PyResult<(f64, f64, f64)> {
        let l = self.0.loss(&x.0, &y.0, &eps, beta).map_err(err)?;
        Ok((l.total, l.recon, l.kl))
    }
}

/// Closed-form linear-Gaussian estimator.
#[pyclass(name = "LinearGaussianModel", module = "pydeproj")]
struct PyLinearGaussian(LinearGaussianModel);

#[pymethods]
impl PyLinearGaussian {
    #[staticmethod]
    #[pyo3(signature = (xs, ys, ridge = 1e-6))]
    fn fit(xs: Vec<PyTensor>, ys: Vec<PyTensor>, ridge: f64) -> PyResult<Self> {
        if xs.len() != ys.len() {
            return Err(PyValueError::new_err(format!(
                "invalid-argument: {} projections but {} signals",
                xs.len(),
                ys.len()
            )));
        }
        let pairs: Vec<Pair> = xs
            .into_iter()
            .zip(ys)
            .map(|(x, y)| Pair { x: x.0, y: y.0 })
            .collect();
        LinearGaussianModel::fit(&pairs, ridge)
            .map(PyLinearGaussian)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let c = Container::load(&path).map_err(err)?;
        LinearGaussianModel::from_container(&c)
            .map(PyLinearGaussian)
            .map_err(err)
    }

    fn posterior_mean(&self, x: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor(self.0.posterior(&x.0).map_err(err)?.mean_tensor()))
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.factor().ncols()
    }

    #[pyo3(signature = (x, k, seed = 0))]
    fn sample(&self, x: &PyTensor, k: usize, seed: u64) -> PyResult<Vec<PyTensor>> {
        deproj_core::baselines::lmmse_sample(&self.0, &x.0, k, seed)
            .map(|v| v.into_iter().map(PyTensor).collect())
            .map_err(err)
    }
}

#[pyfunction]
fn kl_diag(q_mean: Vec<f32>, q_log_var: Vec<f32>, p_mean: Vec<f32>, p_log_var: Vec<f32>) -> PyResult<f64> {
    let q = DiagonalGaussian::new(q_mean, q_log_var).map_err(err)?;
    let p = DiagonalGaussian::new(p_mean, p_log_var).map_err(err)?;
    model::kl_diag(&q, &p).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, peak = 1.0))]
fn psnr(a: &PyTensor, b: &PyTensor, peak: f64) -> PyResult<f64> {
    deproj_core::eval::psnr_peak(&a.0, &b.0, peak).map_err(err)
}

#[pyfunction]
fn parse_idx(data: &[u8]) -> PyResult<PyTensor> {
    read_idx(data).map(PyTensor).map_err(err)
}

#[pymodule]
fn pydeproj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyProjectionSpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyLinearGaussian>()?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(kl_diag, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx, m)?)?;
    m.add("PSNR_CAP", deproj_core::eval::PSNR_CAP)?;
    Ok(())
}
