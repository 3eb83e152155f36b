//! Python bindings. Images cross the boundary as nested lists
//! `[channel][row][col]`, kernels as `[row][col]`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use deblur_sdi::harness::bench;
use deblur_sdi::{engine, io, schedule, BlurKernel, BoundaryMode, GroundTruth, ImageTensor, NoiseSchedule, SdiConfig};

create_exception!(deblur_sdi_py, DeblurError, PyException);

fn to_py(e: deblur_sdi::Error) -> PyErr {
    match e {
        deblur_sdi::Error::Validation(_) | deblur_sdi::Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        other => DeblurError::new_err(other.to_string()),
    }
}

fn boundary(name: &str) -> PyResult<BoundaryMode> {
    name.parse().map_err(to_py)
}

#[pyclass(name = "Image", module = "deblur_sdi_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: ImageTensor,
}

#[pymethods]
impl PyImage {
    /// Accepts `[row][col]` (grayscale) or `[channel][row][col]`.
    #[new]
    fn new(values: &Bound<'_, PyAny>) -> PyResult<Self> {
        let planes: Vec<Vec<Vec<f64>>> = match values.extract::<Vec<Vec<f64>>>() {
            Ok(rows) => vec![rows],
            Err(_) => values
                .extract()
                .map_err(|_| PyTypeError::new_err("expected nested lists [row][col] or [channel][row][col]"))?,
        };
        let channels = planes.len();
        let height = planes.first().map_or(0, Vec::len);
        let width = planes.first().and_then(|p| p.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(channels * height * width);
        for plane in &planes {
            if plane.len() != height || plane.iter().any(|r| r.len() != width) {
                return Err(PyValueError::new_err("ragged image lists"));
            }
            data.extend(plane.iter().flatten());
        }
        Ok(Self {
            inner: ImageTensor::new(height, width, channels, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_image(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_image(&self.inner, path).map_err(to_py)
    }

    /// `(channels, height, width)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels(), self.inner.height(), self.inner.width())
    }

    fn to_list(&self) -> Vec<Vec<Vec<f64>>> {
        let w = self.inner.width();
        (0..self.inner.channels())
            .map(|c| self.inner.plane(c).chunks(w).map(<[f64]>::to_vec).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Image({})", self.inner.shape_string())
    }
}

#[pyclass(name = "Kernel", module = "deblur_sdi_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyKernel {
    inner: BlurKernel,
}

#[pymethods]
impl PyKernel {
    /// Square `[row][col]` weights; must already be non-negative with unit sum
    /// unless `normalize` is set.
    #[new]
    #[pyo3(signature = (rows, normalize = false))]
    fn new(rows: Vec<Vec<f64>>, normalize: bool) -> PyResult<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(PyValueError::new_err("kernel must be square"));
        }
        let w: Vec<f64> = rows.into_iter().flatten().collect();
        let inner = if normalize {
            BlurKernel::normalized(size, w)
        } else {
            BlurKernel::new(size, w)
        };
        Ok(Self {
            inner: inner.map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn delta(size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: BlurKernel::delta(size).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn uniform(size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: BlurKernel::uniform(size).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_kernel(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.weights().chunks(self.inner.size()).map(<[f64]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({0}x{0})", self.inner.size())
    }
}

/// Run configuration. Keyword arguments override defaults by field name,
/// e.g. `Config(outer_steps=10, generator_mode="standard")`.
#[pyclass(name = "Config", module = "deblur_sdi_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: SdiConfig,
}

fn toml_value(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = v.extract::<bool>() {
        Ok(toml::Value::Boolean(b))
    } else if let Ok(i) = v.extract::<i64>() {
        Ok(toml::Value::Integer(i))
    } else if let Ok(f) = v.extract::<f64>() {
        Ok(toml::Value::Float(f))
    } else if let Ok(s) = v.extract::<String>() {
        Ok(toml::Value::String(s))
    } else {
        Err(PyTypeError::new_err("config values must be bool, int, float or str"))
    }
}

fn with_overrides(base: &SdiConfig, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<SdiConfig> {
    let Some(kwargs) = kwargs else {
        return Ok(base.clone());
    };
    let mut table: toml::Table = base.to_toml().parse().expect("config round-trips through toml");
    for (k, v) in kwargs.iter() {
        let key: String = k.extract()?;
        if !table.contains_key(&key) || key == "adam" {
            return Err(PyValueError::new_err(format!("unknown config field {key:?}")));
        }
        let mut value = toml_value(&v)?;
        // integers are accepted for float fields
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(&key), &value) {
            value = toml::Value::Float(*i as f64);
        }
        table.insert(key, value);
    }
    SdiConfig::from_toml(&table.to_string()).map_err(to_py)
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Ok(Self {
            inner: with_overrides(&SdiConfig::default(), kwargs)?,
        })
    }

    /// Copy with some fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Ok(Self {
            inner: with_overrides(&self.inner, kwargs)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SdiConfig::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __getitem__(&self, key: &str, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let table: toml::Table = self.inner.to_toml().parse().expect("config round-trips through toml");
        let value = match table.get(key) {
            Some(toml::Value::Boolean(b)) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
            Some(toml::Value::Integer(i)) => i.into_pyobject(py)?.into_any().unbind(),
            Some(toml::Value::Float(f)) => f.into_pyobject(py)?.into_any().unbind(),
            Some(toml::Value::String(s)) => s.into_pyobject(py)?.into_any().unbind(),
            _ => return Err(PyValueError::new_err(format!("unknown config field {key:?}"))),
        };
        Ok(value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(T={}, S={}, kernel_size={}, seed={})",
            self.inner.outer_steps, self.inner.inner_iters, self.inner.kernel_size, self.inner.seed
        )
    }
}

#[pyclass(name = "Schedule", module = "deblur_sdi_py", frozen)]
pub struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (
        steps = schedule::DEFAULT_STEPS,
        beta_start = schedule::DEFAULT_BETA_START,
        beta_end = schedule::DEFAULT_BETA_END,
        mu = schedule::DEFAULT_MU,
        direction = "verbatim",
    ))]
    fn new(steps: usize, beta_start: f64, beta_end: f64, mu: f64, direction: &str) -> PyResult<Self> {
        let direction = direction.parse().map_err(to_py)?;
        Ok(Self {
            inner: NoiseSchedule::build_with(steps, beta_start, beta_end, mu, direction).map_err(to_py)?,
        })
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.clone()
    }

    #[getter]
    fn alpha_bar(&self) -> Vec<f64> {
        self.inner.alpha_bar.clone()
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma.clone()
    }

    #[getter]
    fn sigma_kernel(&self) -> Vec<f64> {
        self.inner.sigma_kernel.clone()
    }

    /// `(σ_t, σ'_t)` for outer step `t` in `1..=steps`.
    fn levels(&self, t: usize) -> PyResult<(f64, f64)> {
        if t == 0 || t > self.inner.steps {
            return Err(PyValueError::new_err(format!("step {t} outside 1..={}", self.inner.steps)));
        }
        Ok(self.inner.levels_at_step(t))
    }

    fn __len__(&self) -> usize {
        self.inner.steps
    }
}

/// Blurs `image` with `kernel`; `method` is "direct" or "fft" (circular only).
#[pyfunction]
#[pyo3(signature = (image, kernel, boundary = "circular", method = "direct"))]
fn convolve(image: &PyImage, kernel: &PyKernel, boundary: &str, method: &str) -> PyResult<PyImage> {
    let mode = self::boundary(boundary)?;
    let out = match method {
        "direct" => deblur_sdi::convolve_direct(&image.inner, &kernel.inner, mode),
        "fft" if mode == BoundaryMode::Circular => deblur_sdi::convolve_fft(&image.inner, &kernel.inner),
        "fft" => return Err(PyValueError::new_err("fft convolution is circular only")),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    Ok(PyImage { inner: out.map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (sharp, kernel, noise_std = 0.0, seed = 0, boundary = "circular"))]
fn synthesize(sharp: &PyImage, kernel: &PyKernel, noise_std: f64, seed: u64, boundary: &str) -> PyResult<PyImage> {
    let out = deblur_sdi::synthesize_observation(&sharp.inner, &kernel.inner, self::boundary(boundary)?, noise_std, seed);
    Ok(PyImage { inner: out.map_err(to_py)? })
}

/// Runs blind deconvolution. Returns `(image, kernel, trace)` where `trace`
/// is a list of per-step dicts. Supplying `sharp` (and optionally
/// `true_kernel`) fills the metric columns of the trace.
#[pyfunction]
#[pyo3(signature = (observation, config = None, sharp = None, true_kernel = None))]
fn deblur<'py>(
    py: Python<'py>,
    observation: &PyImage,
    config: Option<&PyConfig>,
    sharp: Option<&PyImage>,
    true_kernel: Option<&PyKernel>,
) -> PyResult<(PyImage, PyKernel, Vec<Bound<'py, PyDict>>)> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let gt = sharp.map(|s| GroundTruth {
        image: s.inner.clone(),
        kernel: true_kernel.map(|k| k.inner.clone()),
    });
    let obs = observation.inner.clone();
    let out = py
        .detach(move || engine::run(&obs, &cfg, gt.as_ref(), &mut engine::Silent))
        .map_err(to_py)?;
    let mut trace = Vec::with_capacity(out.trace.len());
    for r in &out.trace {
        let d = PyDict::new(py);
        d.set_item("step", r.step)?;
        d.set_item("sigma", r.sigma)?;
        d.set_item("sigma_kernel", r.sigma_kernel)?;
        d.set_item("first_loss", r.first_loss)?;
        d.set_item("loss", r.loss)?;
        d.set_item("psnr", r.psnr)?;
        d.set_item("ssim", r.ssim)?;
        d.set_item("kernel_similarity", r.kernel_similarity)?;
        d.set_item("kernel_lr", r.kernel_lr)?;
        d.set_item("elapsed_s", r.elapsed_s)?;
        trace.push(d);
    }
    Ok((PyImage { inner: out.image }, PyKernel { inner: out.kernel }, trace))
}

#[pyfunction]
fn psnr(reference: &PyImage, estimate: &PyImage) -> PyResult<f64> {
    deblur_sdi::psnr(&reference.inner, &estimate.inner).map_err(to_py)
}

#[pyfunction]
fn ssim(reference: &PyImage, estimate: &PyImage) -> PyResult<f64> {
    deblur_sdi::ssim(&reference.inner, &estimate.inner).map_err(to_py)
}

#[pyfunction]
fn kernel_similarity(true_kernel: &PyKernel, estimate: &PyKernel) -> f64 {
    deblur_sdi::kernel_similarity(&true_kernel.inner, &estimate.inner)
}

/// The built-in synthetic scene and motion kernel: `(sharp, kernel)`.
#[pyfunction]
#[pyo3(signature = (size = bench::BENCH_SIZE))]
fn benchmark_instance(size: usize) -> PyResult<(PyImage, PyKernel)> {
    Ok((
        PyImage {
            inner: bench::benchmark_image(size).map_err(to_py)?,
        },
        PyKernel {
            inner: bench::benchmark_kernel().map_err(to_py)?,
        },
    ))
}

#[pymodule]
fn deblur_sdi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeblurError", m.py().get_type::<DeblurError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(convolve, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(deblur, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_instance, m)?)?;
    Ok(())
}
