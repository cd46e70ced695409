//! Python bindings: configs, classifiers, the interpolation engine, metrics
//! and the experiment commands. Images cross the boundary as flat lists in
//! `[H, W, D]` order; structured results come back as dicts.

use std::path::PathBuf;

use gai_forge::benchkit::{self, CoverageMatrix};
use gai_forge::diffnet::{checkpoint, ArchSpec, Classifier};
use gai_forge::experiment::{self, ExperimentConfig, Sweep};
use gai_forge::gai::{self, GaiConfig};
use gai_forge::numcore::{SeededRng, Tensor};
use gai_forge::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    if e.is_usage() {
        return PyValueError::new_err(e.to_string());
    }
    match e {
        Error::Io { .. } | Error::RawIo(_) => PyIOError::new_err(e.to_string()),
        Error::Contract(_) | Error::ShapeMismatch { .. } | Error::Format(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into plain Python objects.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

/// Resolved experiment configuration.
#[pyclass(name = "Config", module = "gai_forge_py")]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, then the TOML file at `path`, then `KEY=VALUE` overrides.
    #[new]
    #[pyo3(signature = (path=None, overrides=Vec::new()))]
    fn new(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ExperimentConfig::load(path.as_deref(), &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// A copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let mut tree = toml::Table::try_from(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        for o in &overrides {
            experiment::apply_override(&mut tree, o).map_err(to_py)?;
        }
        let inner = ExperimentConfig::from_toml_str(&toml::to_string(&tree).expect("table serializes")).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_object(py, &self.inner)
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.benchmark.classes()
    }

    fn __repr__(&self) -> String {
        format!("Config(method={}, hash={})", self.inner.method, self.inner.short_hash())
    }
}

/// The small conv classifier used as teacher and student.
#[pyclass(name = "Classifier", module = "gai_forge_py")]
#[derive(Clone)]
struct PyClassifier {
    inner: Classifier,
}

impl PyClassifier {
    fn image(&self, pixels: Vec<f64>) -> PyResult<Tensor> {
        let x = Tensor::new(self.inner.arch().input_shape().to_vec(), pixels).map_err(to_py)?;
        self.inner.check_input(&x).map_err(to_py)?;
        Ok(x)
    }
}

#[pymethods]
impl PyClassifier {
    /// Randomly initialized reference network.
    #[new]
    #[pyo3(signature = (height, width, channels, classes, seed=0))]
    fn new(height: usize, width: usize, channels: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let arch = ArchSpec::reference(height, width, channels, classes);
        let inner = Classifier::new(arch, &mut SeededRng::new(seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.inner.arch().input_shape()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.arch().parameter_count()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Softmax probabilities for a batch of flat images.
    fn predict_proba(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let xs = images.into_iter().map(|p| self.image(p)).collect::<PyResult<Vec<_>>>()?;
        self.inner.predict_proba(&xs.iter().collect::<Vec<_>>()).map_err(to_py)
    }
}

/// Runs the guided interpolation on one pair and returns the adversarial
/// sample, its coefficients and the teacher's verdict.
#[pyfunction]
#[pyo3(signature = (
    x_major, x_minor, source_class, teacher, student, minority_label,
    seed=0, steps=10, step_size=1.0, restrain_weight=0.5, smooth_weight=10.0,
    reject_threshold=0.5, alpha_init=0.75, noise_scale=0.01,
))]
#[allow(clippy::too_many_arguments)]
fn gai_generate(
    py: Python<'_>,
    x_major: Vec<f64>,
    x_minor: Vec<f64>,
    source_class: usize,
    teacher: &PyClassifier,
    student: &PyClassifier,
    minority_label: usize,
    seed: u64,
    steps: usize,
    step_size: f64,
    restrain_weight: f64,
    smooth_weight: f64,
    reject_threshold: f64,
    alpha_init: f64,
    noise_scale: f64,
) -> PyResult<PyObject> {
    let cfg = GaiConfig {
        steps,
        step_size,
        restrain_weight,
        smooth_weight,
        reject_threshold,
        alpha_init,
        noise_scale,
        ..GaiConfig::with_minority(minority_label)
    };
    cfg.validate().map_err(to_py)?;
    let (a, b) = (student.image(x_major)?, student.image(x_minor)?);
    let mut rng = SeededRng::new(seed);
    let out = gai::gai_generate(&a, &b, source_class, &cfg, &teacher.inner, &student.inner, &mut rng).map_err(to_py)?;
    let d = pyo3::types::PyDict::new_bound(py);
    d.set_item("sample", out.sample.data().to_vec())?;
    d.set_item("alpha", out.coefficients.data().to_vec())?;
    d.set_item("accepted", out.accepted)?;
    d.set_item("teacher_confidence", out.teacher_confidence)?;
    d.set_item("skipped_steps", out.skipped_steps)?;
    Ok(d.into_any().unbind())
}

/// Total variation of a coefficient map, normalized per neighbor pair.
#[pyfunction]
fn smoothness_loss(alpha: Vec<f64>, height: usize, width: usize, channels: usize) -> PyResult<f64> {
    let t = Tensor::new(vec![height, width, channels], alpha).map_err(to_py)?;
    gai::smoothness_loss(&t).map_err(to_py)
}

#[pyfunction]
fn auc_trapezoid(fake: Vec<f64>, real: Vec<f64>) -> PyResult<f64> {
    benchkit::auc_trapezoid(&fake, &real).map_err(to_py)
}

#[pyfunction]
fn auc_pairwise(fake: Vec<f64>, real: Vec<f64>) -> PyResult<f64> {
    benchkit::auc_pairwise(&fake, &real).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (positive, real, fpr_point=benchkit::DEFAULT_FPR))]
fn tpr_at_fpr(positive: Vec<f64>, real: Vec<f64>, fpr_point: f64) -> PyResult<f64> {
    benchkit::tpr_at_fpr(&positive, &real, fpr_point).map_err(to_py)
}

/// Components of the coverage graph at `threshold` percent.
#[pyfunction]
#[pyo3(signature = (names, acc, threshold=70.0))]
fn build_taxonomy(py: Python<'_>, names: Vec<String>, acc: Vec<Vec<f64>>, threshold: f64) -> PyResult<PyObject> {
    let m = CoverageMatrix::new(names, acc).map_err(to_py)?;
    to_object(py, &benchkit::build_taxonomy(&m, threshold).map_err(to_py)?)
}

/// `count` rendered images of family `family` (an id into the config's
/// roster), as `(pixels, id)` pairs.
#[pyfunction]
fn render_family(config: &PyConfig, family: usize, count: usize, seed: u64) -> PyResult<Vec<(Vec<f64>, u64)>> {
    let cfg = &config.inner;
    let spec = cfg
        .families
        .get(family)
        .ok_or_else(|| PyValueError::new_err(format!("no family {family} in the roster")))?;
    let samples = benchkit::generate_family_dataset(spec, cfg.image, seed, count).map_err(to_py)?;
    Ok(samples.into_iter().map(|s| (s.image.into_data(), s.id)).collect())
}

#[pyfunction]
fn render_real(config: &PyConfig, count: usize, seed: u64) -> Vec<(Vec<f64>, u64)> {
    benchkit::generate_real_dataset(config.inner.image, seed, count)
        .into_iter()
        .map(|s| (s.image.into_data(), s.id))
        .collect()
}

#[pyfunction]
fn gen_data(py: Python<'_>, config: &PyConfig) -> PyResult<PyObject> {
    let m = py.allow_threads(|| experiment::cmd_gen_data(&config.inner)).map_err(to_py)?;
    to_object(py, &m)
}

/// Returns `(matrix, taxonomy)` as dicts.
#[pyfunction]
fn coverage(py: Python<'_>, config: &PyConfig) -> PyResult<(PyObject, PyObject)> {
    let (m, t) = py.allow_threads(|| experiment::cmd_coverage(&config.inner)).map_err(to_py)?;
    Ok((to_object(py, &m)?, to_object(py, &t)?))
}

#[pyfunction]
fn assemble(py: Python<'_>, config: &PyConfig) -> PyResult<PyObject> {
    let s = py.allow_threads(|| experiment::cmd_assemble(&config.inner)).map_err(to_py)?;
    to_object(py, &s)
}

/// Runs the config's method over its seeds; returns the aggregate report.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<PyObject> {
    let r = py.allow_threads(|| experiment::cmd_run(&config.inner)).map_err(to_py)?;
    to_object(py, &r)
}

#[pyfunction]
fn ablate(py: Python<'_>, config: &PyConfig, sweep: &str) -> PyResult<PyObject> {
    let sweep: Sweep = sweep.parse().map_err(to_py)?;
    let rows = py.allow_threads(|| experiment::cmd_ablate(&config.inner, sweep)).map_err(to_py)?;
    to_object(py, &rows)
}

#[pymodule]
fn gai_forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(gai_generate, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness_loss, m)?)?;
    m.add_function(wrap_pyfunction!(auc_trapezoid, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pairwise, m)?)?;
    m.add_function(wrap_pyfunction!(tpr_at_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(build_taxonomy, m)?)?;
    m.add_function(wrap_pyfunction!(render_family, m)?)?;
    m.add_function(wrap_pyfunction!(render_real, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    Ok(())
}
