//! Python bindings: images, kernels, phantoms, metrics, single restorations
//! and full benchmark runs.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use pis_core::cli::config::{ExperimentConfig, RawConfig, SolverKind};
use pis_core::cli::experiment::{self, Operators, RunError};
use pis_core::operators::{self as ops, Convolution};
use pis_core::{metrics, phantoms, ImageGrid};

create_exception!(pis, PisError, PyException);
create_exception!(pis, SolverError, PisError);

fn core_err(e: pis_core::Error) -> PyErr {
    match e {
        pis_core::Error::Domain { .. } | pis_core::Error::MuSearchExhausted(_) => {
            SolverError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(_) => PyValueError::new_err(e.to_string()),
        RunError::Solver { .. } => SolverError::new_err(e.to_string()),
        RunError::Setup(inner) => core_err(inner),
        RunError::Image(_) => PisError::new_err(e.to_string()),
    }
}

/// Real-valued image, row-major.
#[pyclass(name = "Image", module = "pis", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: ImageGrid,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(PyValueError::new_err("rows have different lengths"));
        }
        let inner = ImageGrid::new(h, w, rows.into_iter().flatten().collect()).map_err(core_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            inner: ImageGrid::filled(height, width, value),
        }
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner
            .as_slice()
            .chunks(self.inner.width())
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        let (h, w) = self.inner.shape();
        if row >= h || col >= w {
            return Err(PyValueError::new_err(format!("({row}, {col}) outside {h}x{w}")));
        }
        Ok(self.inner.get(row, col))
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn add_scalar(&self, s: f64) -> Self {
        Self {
            inner: self.inner.add_scalar(s),
        }
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.inner.shape();
        format!("Image({h}x{w}, min={}, max={})", self.inner.min(), self.inner.max())
    }
}

/// Unit-sum blur kernel on a `(2r+1)²` support.
#[pyclass(name = "Kernel", module = "pis", from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: ops::Kernel,
}

#[pymethods]
impl PyKernel {
    /// Isotropic Gaussian with the given −3 dB amplitude cut-off (rad/sample).
    #[staticmethod]
    #[pyo3(signature = (cutoff, radius=None))]
    fn gaussian(cutoff: f64, radius: Option<usize>) -> PyResult<Self> {
        let r = radius.unwrap_or_else(|| ops::default_gaussian_radius(cutoff).max(1));
        Ok(Self {
            inner: ops::gaussian_kernel(cutoff, r).map_err(core_err)?,
        })
    }

    #[staticmethod]
    fn rational(d: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ops::rational_kernel(d).map_err(core_err)?,
        })
    }

    #[getter]
    fn radius(&self) -> usize {
        self.inner.radius()
    }

    fn taps(&self) -> Vec<Vec<f64>> {
        self.inner.taps().chunks(self.inner.side()).map(<[f64]>::to_vec).collect()
    }

    fn convolve(&self, image: &PyImage) -> PyResult<PyImage> {
        Ok(PyImage {
            inner: ops::convolve(&image.inner, &self.inner).map_err(core_err)?,
        })
    }

    fn correlate(&self, image: &PyImage) -> PyResult<PyImage> {
        Ok(PyImage {
            inner: ops::convolve_adjoint(&image.inner, &self.inner).map_err(core_err)?,
        })
    }
}

#[pyfunction]
fn shepp_logan(height: usize, width: usize) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: phantoms::shepp_logan(height, width).map_err(core_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (height, width, seed, density=phantoms::DEFAULT_DENSITY, peak=phantoms::DEFAULT_PEAK))]
fn sparse_phantom(height: usize, width: usize, seed: u64, density: f64, peak: f64) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: phantoms::sparse_point_phantom(height, width, density, peak, seed).map_err(core_err)?,
    })
}

/// Independent Poisson draws with the given means, as an Image of counts.
#[pyfunction]
fn poisson_sample(mean: &PyImage, seed: u64) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: phantoms::poisson_sample(&mean.inner, seed).map_err(core_err)?.to_image(),
    })
}

#[pyfunction]
fn nmse(truth: &PyImage, estimate: &PyImage) -> PyResult<f64> {
    metrics::nmse(&truth.inner, &estimate.inner).map_err(core_err)
}

/// Mean SSIM; the dynamic range defaults to the truth's max − min.
#[pyfunction]
#[pyo3(signature = (truth, estimate, dynamic_range=None))]
fn ssim(truth: &PyImage, estimate: &PyImage, dynamic_range: Option<f64>) -> PyResult<f64> {
    match dynamic_range {
        Some(r) => metrics::ssim(&truth.inner, &estimate.inner, r),
        None => metrics::ssim_auto(&truth.inner, &estimate.inner),
    }
    .map_err(core_err)
}

/// `λ_max(H*H)` of periodic convolution on a `height × width` grid.
#[pyfunction]
#[pyo3(signature = (kernel, height, width, iterations=100, seed=0))]
fn convolution_norm_sq(kernel: &PyKernel, height: usize, width: usize, iterations: usize, seed: u64) -> PyResult<f64> {
    let conv = Convolution::new(kernel.inner.clone(), height, width).map_err(core_err)?;
    ops::operator_norm_sq(&conv, iterations, seed).map_err(core_err)
}

/// Experiment configuration built from `key = value` text plus overrides.
#[pyclass(name = "Experiment", module = "pis")]
struct PyExperiment {
    config: ExperimentConfig,
}

fn build_config(text: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<ExperimentConfig> {
    let mut raw = RawConfig::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    for (k, v) in overrides.unwrap_or_default() {
        raw.set(&k, v);
    }
    raw.build().map_err(|e| PyValueError::new_err(e.to_string()))
}

type TraceRow = (usize, f64, Option<f64>, Option<f64>, Option<f64>);

#[pymethods]
impl PyExperiment {
    #[new]
    #[pyo3(signature = (text="", overrides=None))]
    fn new(text: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        Ok(Self {
            config: build_config(text, overrides)?,
        })
    }

    #[getter]
    fn trials(&self) -> usize {
        self.config.trials
    }

    #[getter]
    fn solvers(&self) -> Vec<String> {
        self.config.solvers.iter().map(|s| s.to_string()).collect()
    }

    /// `(truth, counts, background)` for a trial seed.
    fn scene(&self, seed: u64) -> PyResult<(PyImage, PyImage, f64)> {
        let s = experiment::make_scene(&self.config, seed).map_err(run_err)?;
        Ok((
            PyImage { inner: s.truth },
            PyImage {
                inner: s.counts.to_image(),
            },
            s.background,
        ))
    }

    /// Restores `data`; returns the image and trace rows
    /// `(iter, objective, mu, rel_change, nmse)`. With `truth` (no
    /// background) the NMSE is tracked against `truth + background`.
    #[pyo3(signature = (data, solver="pis", truth=None))]
    fn restore(
        &self,
        py: Python<'_>,
        data: &PyImage,
        solver: &str,
        truth: Option<&PyImage>,
    ) -> PyResult<(PyImage, Vec<TraceRow>)> {
        let kind = SolverKind::parse(solver)
            .ok_or_else(|| PyValueError::new_err(format!("unknown solver `{solver}`")))?;
        let g = data.inner.clone();
        let truth = truth.map(|t| t.inner.clone());
        let cfg = self.config.clone();
        let r = py
            .detach(move || -> Result<_, RunError> {
                let (background, _) = experiment::noise_level(&cfg, truth.as_ref().unwrap_or(&g))?;
                let reference = truth.map(|t| t.add_scalar(background));
                let ops = Operators::new(&cfg, g.height(), g.width())?;
                experiment::restore(&cfg, &ops, kind, &g, background, reference.as_ref())
            })
            .map_err(run_err)?;
        let rows = r
            .trace
            .records
            .iter()
            .map(|x| (x.iter, x.objective, x.mu, x.rel_change, x.nmse))
            .collect();
        Ok((PyImage { inner: r.image }, rows))
    }

    /// Runs the full benchmark, writing artifacts to the configured output
    /// directory, and returns one summary dict per solver.
    fn run(&self, py: Python<'_>) -> PyResult<Vec<BTreeMap<String, String>>> {
        let cfg = self.config.clone();
        let report = py.detach(move || experiment::run_experiment(&cfg)).map_err(run_err)?;
        Ok(report
            .summary
            .iter()
            .map(|row| {
                let a = &row.aggregate;
                BTreeMap::from([
                    ("solver".to_string(), row.solver.to_string()),
                    ("kernel".to_string(), row.kernel.clone()),
                    ("snr".to_string(), row.snr.to_string()),
                    ("trials".to_string(), a.trials.to_string()),
                    ("mean_nmse".to_string(), a.mean_nmse.to_string()),
                    ("stderr_nmse".to_string(), a.stderr_nmse.to_string()),
                    ("mean_ssim".to_string(), a.mean_ssim.to_string()),
                    ("iterations".to_string(), a.mean_iterations.to_string()),
                ])
            })
            .collect())
    }
}

#[pymodule]
fn pis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PisError", m.py().get_type::<PisError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(shepp_logan, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_sample, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(convolution_norm_sq, m)?)?;
    Ok(())
}
