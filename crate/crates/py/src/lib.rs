//! Python bindings: scenes, training configurations, networks, training
//! and evaluation. Images and maps come back as nested lists indexed
//! `[row][col]`, ready for `numpy.asarray`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use neref::evaluation::{evaluate_view, render_from_field, MetricsReport};
use neref::field::Slab;
use neref::geometry::{refract as refract_vec, Vec3};
use neref::grid::Grid;
use neref::io::{load_checkpoint, save_checkpoint, to_toml};
use neref::simulator::{render_camera, Scene as CoreScene, SceneConfig, WaveComponent, WaveSurface};
use neref::training::{train as train_core, TrainConfig as CoreConfig, TrainingData};

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn rows<T: Clone, U>(g: &Grid<T>, f: impl Fn(&T) -> U) -> Vec<Vec<U>> {
    (0..g.height).map(|r| (0..g.width).map(|c| f(g.get(c, r))).collect()).collect()
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Optical constants of the two media.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct RefractionConstants {
    inner: neref::RefractionConstants,
}

#[pymethods]
impl RefractionConstants {
    #[new]
    #[pyo3(signature = (n1 = 1.0, n2 = 1.33))]
    fn new(n1: f64, n2: f64) -> PyResult<Self> {
        Ok(Self {
            inner: neref::RefractionConstants::new(n1, n2).map_err(value_err)?,
        })
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.inner.ratio()
    }
}

/// Refracts `incident` at a surface with unit `normal` (pointing back toward
/// the incoming ray); `None` on total internal reflection.
#[pyfunction]
fn refract(incident: [f64; 3], normal: [f64; 3], constants: RefractionConstants) -> Option<[f64; 3]> {
    refract_vec(&v3(incident), &v3(normal), &constants.inner).ok().map(|t| arr(&t))
}

/// Training recipe; `desk()` is small enough for a laptop core.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: CoreConfig,
}

#[pymethods]
impl TrainConfig {
    #[staticmethod]
    fn desk() -> Self {
        Self { inner: CoreConfig::desk() }
    }

    #[staticmethod]
    fn full() -> Self {
        Self {
            inner: CoreConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::parse(text, "<python>").map_err(value_err)?,
        })
    }

    fn to_toml(&self) -> String {
        to_toml(&self.inner)
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
        self.inner.init.seed = v;
    }

    #[getter]
    fn batch_rays(&self) -> usize {
        self.inner.batch_rays
    }

    #[setter]
    fn set_batch_rays(&mut self, v: usize) {
        self.inner.batch_rays = v;
    }

    #[getter]
    fn lambda_ds(&self) -> f64 {
        self.inner.lambda_ds
    }

    #[setter]
    fn set_lambda_ds(&mut self, v: f64) {
        self.inner.lambda_ds = v;
    }

    /// Coarse and fine samples per ray.
    #[getter]
    fn samples(&self) -> (usize, usize) {
        (self.inner.coarse_samples, self.inner.fine_samples)
    }

    #[setter]
    fn set_samples(&mut self, v: (usize, usize)) {
        self.inner.coarse_samples = v.0;
        self.inner.fine_samples = v.1;
    }
}

/// Synthetic water scene with a camera rig and a pattern at `z = 0`.
#[pyclass(frozen)]
struct Scene {
    inner: CoreScene,
}

#[pymethods]
impl Scene {
    /// Built-in desk scene: `"flat"` or `"bump"`.
    #[staticmethod]
    #[pyo3(signature = (name, resolution = 64))]
    fn preset(name: &str, resolution: usize) -> PyResult<Self> {
        let surface = match name {
            "flat" => WaveSurface::flat(0.2),
            "bump" => WaveSurface {
                base_height: 0.2,
                time: 0.0,
                waves: vec![WaveComponent::Gaussian {
                    amplitude: 0.02,
                    sigma: 0.1,
                    center: [0.0, 0.0],
                    velocity: [0.0, 0.0],
                }],
            },
            other => return Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
        };
        let cfg = SceneConfig::desk(name, surface, resolution);
        Ok(Self {
            inner: CoreScene::from_config(&cfg, "preset", std::path::Path::new(".")).map_err(value_err)?,
        })
    }

    /// Scene from TOML text; relative pattern paths resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir = None))]
    fn from_toml(text: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let cfg = SceneConfig::parse(text, "<python>").map_err(value_err)?;
        let base = base_dir.unwrap_or_else(|| ".".into());
        Ok(Self {
            inner: CoreScene::from_config(&cfg, "<python>", &base).map_err(value_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn cameras(&self) -> Vec<String> {
        self.inner.cameras.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn held_out(&self) -> Vec<usize> {
        self.inner.held_out_indices()
    }

    #[getter]
    fn training(&self) -> Vec<usize> {
        self.inner.training_indices()
    }

    /// Surface height and unit normal at `(x, y)`.
    fn surface(&self, x: f64, y: f64) -> (f64, [f64; 3]) {
        let (h, n) = self.inner.surface.surface_eval(x, y);
        (h, arr(&n))
    }

    /// Ground-truth render of camera `index`: image, depth, normal, warp
    /// (pixels) and validity.
    #[pyo3(signature = (index, with_water = true))]
    fn render<'py>(&self, py: Python<'py>, index: usize, with_water: bool) -> PyResult<Bound<'py, PyDict>> {
        let cam = self.camera(index)?;
        let v = render_camera(&self.inner, &cam.camera, with_water);
        let d = PyDict::new(py);
        d.set_item("image", rows(&v.image, |p| *p))?;
        d.set_item("depth", rows(&v.depth, |x| *x))?;
        d.set_item("normal", rows(&v.normal, arr))?;
        d.set_item("warp", rows(&v.warp.disp, |x| *x))?;
        d.set_item("valid", rows(&v.warp.valid, |x| *x))?;
        Ok(d)
    }
}

impl Scene {
    fn camera(&self, index: usize) -> PyResult<&neref::simulator::SceneCamera> {
        self.inner
            .cameras
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("camera index {index} out of range")))
    }
}

/// Density/normal coordinate network.
#[pyclass(frozen)]
struct Network {
    inner: neref::NeRefNetwork,
}

#[pymethods]
impl Network {
    /// Freshly initialized network for `config`'s architecture and seed.
    #[new]
    fn new(config: &TrainConfig) -> Self {
        Self {
            inner: neref::NeRefNetwork::new(config.inner.arch, &config.inner.init),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(|e| PyIOError::new_err(e.to_string()))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Density and unit normal at a point.
    fn query(&self, point: [f64; 3]) -> (f64, [f64; 3]) {
        let s = self.inner.query(&v3(point));
        (s.sigma, arr(&s.normal))
    }

    /// View synthesis of scene camera `index` through the learned surface.
    fn render(&self, scene: &Scene, index: usize, config: &TrainConfig) -> PyResult<Vec<Vec<[f64; 3]>>> {
        let sc = &scene.inner;
        let cam = scene.camera(index)?;
        let slab = Slab::around_water(sc.surface.max_height(), config.inner.slab_margin);
        let img = render_from_field(
            &self.inner,
            &cam.camera,
            &sc.pattern,
            &sc.plane,
            &sc.constants,
            &slab,
            &config.inner.schedule(),
        );
        Ok(rows(&img, |p| *p))
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("depth_rmse", r.depth_rmse)?;
    d.set_item("depth_relative_error", r.depth_relative_error)?;
    d.set_item("normal_angle_mean", r.normal_angle_mean)?;
    d.set_item("normal_l2_mean", r.normal_l2_mean)?;
    d.set_item("psnr", r.psnr)?;
    d.set_item("ssim", r.ssim)?;
    d.set_item("pixels", r.pixels)?;
    Ok(d)
}

/// Trains on the given cameras (default: all training cameras) with
/// optional flow noise in pixels; returns the network and per-iteration
/// total loss.
#[pyfunction]
#[pyo3(signature = (scene, config, cameras = None, flow_noise = 0.0))]
fn train(
    scene: &Scene,
    config: &TrainConfig,
    cameras: Option<Vec<usize>>,
    flow_noise: f64,
) -> PyResult<(Network, Vec<f64>)> {
    config
        .inner
        .validate()
        .map_err(|(field, msg)| PyValueError::new_err(format!("{field}: {msg}")))?;
    let cams = cameras.unwrap_or_else(|| scene.inner.training_indices());
    if let Some(&bad) = cams.iter().find(|&&i| i >= scene.inner.cameras.len()) {
        return Err(PyIndexError::new_err(format!("camera index {bad} out of range")));
    }
    if !(flow_noise >= 0.0) {
        return Err(PyValueError::new_err("flow_noise must be non-negative"));
    }
    let data = TrainingData::from_scene(&scene.inner, &cams, flow_noise, config.inner.seed);
    let (net, history) = train_core(&config.inner, &data).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((Network { inner: net }, history.iter().map(|h| h.l_tol).collect()))
}

/// Depth, normal and image metrics of `network` on scene camera `index`.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    network: &Network,
    scene: &Scene,
    index: usize,
    config: &TrainConfig,
) -> PyResult<Bound<'py, PyDict>> {
    scene.camera(index)?;
    let ev = evaluate_view(&network.inner, &scene.inner, index, &config.inner);
    report_dict(py, &ev.report)
}

#[pymodule]
fn pyneref(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RefractionConstants>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Scene>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(refract, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
