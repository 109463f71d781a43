//! Python bindings for the oddspot detector.
//!
//! Compiled as a `cdylib`, the crate yields an importable `oddspot` module
//! wrapping the planar image type and the residual, calibration and
//! detection entry points. Build with `--features extension-module` to get
//! a self-contained `oddspot.so`; `python/smoke_test.py` automates that.

use oddspot_core::calibrate::GgdParams;
use oddspot_core::detect::{DetectionConfig, DetectionRecord};
use oddspot_core::image::MultiChannelImage;
use oddspot_core::residual::ResidualParams;
use oddspot_core::Error;
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Planar multi-channel image; sample index is (c*height + y)*width + x.
#[pyclass(name = "Image")]
#[derive(Clone)]
struct PyImage {
    inner: MultiChannelImage,
}

#[pymethods]
impl PyImage {
    /// Wraps planar channel-major samples as a width x height x channels
    /// image. Every sample must be finite.
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        MultiChannelImage::from_planar(width, height, channels, data)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(PyIndexError::new_err(format!(
                "({x}, {y}, {c}) out of bounds for {}",
                self.__repr__()
            )));
        }
        Ok(self.inner.get(x, y, c))
    }

    /// One channel as a row-major list of width*height samples.
    fn channel(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.inner.channels() {
            return Err(PyIndexError::new_err(format!(
                "channel {c} out of bounds for {}",
                self.__repr__()
            )));
        }
        Ok(self.inner.channel(c).to_vec())
    }

    /// All samples in planar order.
    fn to_list(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}x{})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

/// Generalized-Gaussian fit; shape = 2 is Gaussian, shape = 1 Laplace.
#[pyclass(name = "GgdParams")]
#[derive(Clone)]
struct PyGgdParams {
    inner: GgdParams,
}

#[pymethods]
impl PyGgdParams {
    #[new]
    fn new(shape: f64, scale: f64) -> PyResult<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(PyValueError::new_err(format!(
                "shape and scale must be positive, got {shape} and {scale}"
            )));
        }
        Ok(Self {
            inner: GgdParams { shape, scale },
        })
    }

    #[getter]
    fn shape(&self) -> f64 {
        self.inner.shape
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    fn __repr__(&self) -> String {
        format!(
            "GgdParams(shape={}, scale={})",
            self.inner.shape, self.inner.scale
        )
    }
}

/// One grouped detection at full-resolution coordinates.
#[pyclass(name = "Record")]
#[derive(Clone)]
struct PyRecord {
    inner: DetectionRecord,
}

#[pymethods]
impl PyRecord {
    #[getter]
    fn x(&self) -> usize {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> usize {
        self.inner.y
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale
    }

    #[getter]
    fn kernel_radius(&self) -> usize {
        self.inner.kernel_radius
    }

    #[getter]
    fn channel(&self) -> usize {
        self.inner.channel
    }

    /// Raw NFA; underflows to 0 for extreme detections, in which case
    /// `log10_nfa` still carries the value.
    #[getter]
    fn nfa(&self) -> f64 {
        self.inner.nfa
    }

    #[getter]
    fn log10_nfa(&self) -> f64 {
        self.inner.log10_nfa
    }

    /// Strength band: "weak", "mild", "strong" or "very_strong".
    #[getter]
    fn band(&self) -> &'static str {
        self.inner.band.as_str()
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(x={}, y={}, scale={}, kernel_radius={}, channel={}, log10_nfa={:.3}, band={})",
            self.inner.x,
            self.inner.y,
            self.inner.scale,
            self.inner.kernel_radius,
            self.inner.channel,
            self.inner.log10_nfa,
            self.inner.band.as_str()
        )
    }
}

/// Fits a zero-mean generalized Gaussian to the samples by kurtosis
/// matching with winsorized moments.
#[pyfunction]
fn fit_ggd(samples: Vec<f64>) -> PyResult<PyGgdParams> {
    oddspot_core::calibrate::fit_ggd(&samples)
        .map(|inner| PyGgdParams { inner })
        .map_err(to_py)
}

/// Maps every sample through its channel's fitted CDF onto standard-normal
/// quantiles; `params` supplies one fit per channel.
#[pyfunction]
fn gaussianize(image: &PyImage, params: Vec<PyGgdParams>) -> PyResult<PyImage> {
    let params: Vec<GgdParams> = params.iter().map(|p| p.inner).collect();
    oddspot_core::calibrate::gaussianize(&image.inner, &params)
        .map(|inner| PyImage { inner })
        .map_err(to_py)
}

/// Self-similarity residual: each pixel minus its estimate from the n most
/// similar patches found outside the query's exclusion region.
#[pyfunction]
#[pyo3(signature = (image, patch_side=8, n_neighbors=16, h=10.0, search_stride=1))]
fn compute_residual(
    image: &PyImage,
    patch_side: usize,
    n_neighbors: usize,
    h: f64,
    search_stride: usize,
) -> PyResult<PyImage> {
    let params = ResidualParams {
        patch_side,
        n_neighbors,
        h,
        search_stride,
    };
    oddspot_core::residual::compute_residual(&image.inner, &params)
        .map(|inner| PyImage { inner })
        .map_err(to_py)
}

/// NFA of a standard-normal response at x under n_tests tests, returned as
/// (raw, log10) so extreme detections survive the underflow of the raw
/// value.
#[pyfunction]
fn nfa_value(x: f64, n_tests: f64) -> (f64, f64) {
    oddspot_core::detect::nfa_value(x, n_tests)
}

/// Runs the full detector on an in-memory image and returns the grouped
/// records plus the number of tests. Omitted options fall back to the
/// chosen mode's defaults, exactly like the command line.
#[pyfunction]
#[pyo3(signature = (
    image,
    mode = "pixels",
    epsilon = 1e-2,
    kernel_radii = None,
    n_scales = 4,
    patch_side = None,
    n_neighbors = 16,
    h = 10.0,
    search_stride = 1,
))]
#[allow(clippy::too_many_arguments)]
fn detect(
    image: &PyImage,
    mode: &str,
    epsilon: f64,
    kernel_radii: Option<Vec<usize>>,
    n_scales: usize,
    patch_side: Option<usize>,
    n_neighbors: usize,
    h: f64,
    search_stride: usize,
) -> PyResult<(Vec<PyRecord>, u64)> {
    let mut config = match mode {
        "pixels" => DetectionConfig::default_pixels(),
        "features" => DetectionConfig::default_features(image.inner.channels()),
        other => {
            return Err(PyValueError::new_err(format!(
                "mode must be \"pixels\" or \"features\", got \"{other}\""
            )))
        }
    };
    config.epsilon = epsilon;
    if let Some(radii) = kernel_radii {
        config.kernel_radii = radii;
    }
    config.n_scales = n_scales;
    if let Some(side) = patch_side {
        config.residual.patch_side = side;
    }
    config.residual.n_neighbors = n_neighbors;
    config.residual.h = h;
    config.residual.search_stride = search_stride;
    config.validate().map_err(to_py)?;

    let (records, stack) = oddspot_core::detect::detect(&image.inner, &config).map_err(to_py)?;
    let records = records
        .into_iter()
        .map(|inner| PyRecord { inner })
        .collect();
    Ok((records, stack.n_tests as u64))
}

#[pymodule]
fn oddspot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyGgdParams>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(fit_ggd, m)?)?;
    m.add_function(wrap_pyfunction!(gaussianize, m)?)?;
    m.add_function(wrap_pyfunction!(compute_residual, m)?)?;
    m.add_function(wrap_pyfunction!(nfa_value, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    Ok(())
}
