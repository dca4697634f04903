//! Python bindings for the `cwcc` crate.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cwcc::baselines::{self, Baseline, SaturationMask};
use cwcc::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use cwcc::dataset::{self, synthesize as synth_scenes, LinearImage, Sample, SynthConfig};
use cwcc::metrics::{self, Illuminant};
use cwcc::model::{self, CwccConfig, CwccModel, TrainConfig, Variant};
use cwcc::tensor::AdamConfig;

type Rgb = (f64, f64, f64);

fn err(e: cwcc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn illum(rgb: Rgb) -> PyResult<Illuminant> {
    Illuminant::new(rgb.0, rgb.1, rgb.2).map_err(err)
}

fn tuple(e: Illuminant) -> Rgb {
    let [r, g, b] = e.rgb();
    (r, g, b)
}

/// Linear RGB image stored row-major as interleaved f32 triples.
#[pyclass(name = "Image", module = "pycwcc", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: LinearImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: LinearImage::new(height, width, data).map_err(err)?,
        })
    }

    /// Reads a `.rif` or 16-bit `.png` file.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::read_image(path).map_err(err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        dataset::write_image(&self.inner, path).map_err(err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn resize(&self, height: usize, width: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.resize(height, width).map_err(err)?,
        })
    }

    /// Divides out `illuminant` (green-anchored) and clips to [0, 1].
    fn corrected(&self, illuminant: Rgb) -> PyResult<Self> {
        Ok(Self {
            inner: model::correct_image(&self.inner, &illum(illuminant)?).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

#[pyfunction]
fn recovery_error(gt: Rgb, est: Rgb) -> PyResult<f64> {
    Ok(metrics::recovery_error(&illum(gt)?, &illum(est)?))
}

#[pyfunction]
fn reproduction_error(gt: Rgb, est: Rgb) -> PyResult<f64> {
    Ok(metrics::reproduction_error(&illum(gt)?, &illum(est)?))
}

/// best25 / mean / median / trimean / worst25 of a list of angular errors.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, errors: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = metrics::summarize(&errors).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("best25", s.best25)?;
    d.set_item("mean", s.mean)?;
    d.set_item("median", s.median)?;
    d.set_item("trimean", s.trimean)?;
    d.set_item("worst25", s.worst25)?;
    Ok(d)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&xs, &ys).map_err(err)
}

/// Classical estimators. `method` is one of grey_world, white_patch,
/// shades_of_grey, grey_edge.
#[pyfunction]
#[pyo3(signature = (image, method = "grey_world", p = 6.0, sigma = 2.0, order = 1))]
fn estimate_baseline(image: &PyImage, method: &str, p: f64, sigma: f64, order: u8) -> PyResult<Rgb> {
    let b = match method {
        "grey_world" => Baseline::GreyWorld,
        "white_patch" => Baseline::WhitePatch,
        "shades_of_grey" => Baseline::ShadesOfGrey { p },
        "grey_edge" => Baseline::GreyEdge { order, p, sigma },
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    Ok(tuple(b.estimate(&image.inner, SaturationMask::default()).map_err(err)?))
}

#[pyfunction]
fn grey_world(image: &PyImage) -> PyResult<Rgb> {
    Ok(tuple(baselines::grey_world(&image.inner).map_err(err)?))
}

/// Seeded synthetic scenes as a list of `(image, illuminant, fold)`.
#[pyfunction]
#[pyo3(signature = (n, size = 64, seed = 0, bias = (1.0, 1.0, 1.0), grey_mean = false, noise = 0.0, folds = 10))]
fn synthesize(
    n: usize,
    size: usize,
    seed: u64,
    bias: (f32, f32, f32),
    grey_mean: bool,
    noise: f32,
    folds: usize,
) -> PyResult<Vec<(PyImage, Rgb, usize)>> {
    let cfg = SynthConfig {
        height: size,
        width: size,
        reflectance_bias: [bias.0, bias.1, bias.2],
        grey_mean,
        noise_std: noise,
        folds,
        seed,
        ..SynthConfig::default()
    };
    Ok(synth_scenes(&cfg, n)
        .map_err(err)?
        .into_iter()
        .map(|s| (PyImage { inner: s.sample.image }, tuple(s.sample.gt), s.sample.fold))
        .collect())
}

/// Illuminant estimator with one per-plane extractor (shared) or three
/// (per_channel).
#[pyclass(name = "Model", module = "pycwcc")]
struct PyModel {
    inner: CwccModel,
    seed: u64,
    epoch: usize,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_size = 128, variant = "shared", seed = 0))]
    fn new(input_size: usize, variant: &str, seed: u64) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(err)?;
        let config = CwccConfig {
            input_size,
            variant,
            ..CwccConfig::default()
        };
        Ok(Self {
            inner: CwccModel::new(config, seed).map_err(err)?,
            seed,
            epoch: 0,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = load_checkpoint(path).map_err(err)?;
        let (seed, epoch) = (ck.meta.seed, ck.meta.epoch);
        Ok(Self {
            inner: ck.to_model().map_err(err)?.0,
            seed,
            epoch,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&Checkpoint::from_model(&self.inner, None, self.seed, self.epoch), path).map_err(err)
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.config().input_size
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().as_str()
    }

    fn parameter_count(&self) -> usize {
        self.inner.count_parameters()
    }

    /// Unit-norm illuminant estimate; the image is resized to the model's
    /// input size when needed.
    fn predict(&self, image: &PyImage) -> PyResult<Rgb> {
        let s = self.inner.config().input_size;
        let img = if image.inner.height() == s && image.inner.width() == s {
            image.inner.clone()
        } else {
            image.inner.resize(s, s).map_err(err)?
        };
        Ok(tuple(self.inner.forward(&img).map_err(err)?))
    }

    /// Trains in place on `(image, illuminant)` pairs and returns the
    /// per-epoch mean training error in degrees.
    #[pyo3(signature = (samples, epochs = 30, batch_size = 16, lr = 1e-3, seed = 0))]
    fn fit(&mut self, samples: Vec<(PyImage, Rgb)>, epochs: usize, batch_size: usize, lr: f64, seed: u64) -> PyResult<Vec<f64>> {
        let s = self.inner.config().input_size;
        let data = samples
            .into_iter()
            .map(|(img, gt)| {
                Ok(Sample {
                    image: img.inner.resize(s, s).map_err(err)?,
                    gt: illum(gt)?,
                    fold: 0,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            seed,
        };
        let report = model::train(&mut self.inner, &data, &[], &cfg).map_err(err)?;
        self.epoch = report.best_epoch;
        Ok(report.log.iter().map(|l| l.train_error).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input_size={}, variant={:?}, parameters={})",
            self.inner.config().input_size,
            self.inner.variant().as_str(),
            self.inner.count_parameters()
        )
    }
}

#[pymodule]
fn pycwcc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(recovery_error, m)?)?;
    m.add_function(wrap_pyfunction!(reproduction_error, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(grey_world, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
