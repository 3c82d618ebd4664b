//! Python bindings. Poses and grasps cross the boundary as tuples
//! `(x, y, theta)` and `(gx, gy, gz, gtheta)`; displacements as
//! `(dx, dy, dz, dtheta)`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use pgrasp_core::dataset::{self, CollectConfig, GraspRecord, Manifest};
use pgrasp_core::geom::Point2;
use pgrasp_core::models::{lowess::KERNEL_VARIANCE, Gdn as CoreGdn, GdnVariant, Gqn as CoreGqn, Lowess as CoreLowess};
use pgrasp_core::parts::{self, Pose};
use pgrasp_core::physics::{self, Displacement, Grasp, PhysicsParams};
use pgrasp_core::planner::{self, PlanResult, Scene};
use pgrasp_core::sensor::SensorConfig;
use pgrasp_core::Error;

type PoseT = (f64, f64, f64);
type Quad = (f64, f64, f64, f64);

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::UnknownObject(_) => PyKeyError::new_err(e.to_string()),
        Error::SimulationDivergence { .. } | Error::NumericFault(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pose(p: PoseT) -> Pose {
    Pose::new(p.0, p.1, p.2)
}

fn grasp(g: Quad) -> Grasp {
    Grasp { gx: g.0, gy: g.1, gz: g.2, gtheta: g.3 }
}

fn quad(d: &Displacement) -> Quad {
    (d.dx, d.dy, d.dz, d.dtheta)
}

fn arr(a: [f64; 4]) -> Quad {
    (a[0], a[1], a[2], a[3])
}

/// A procedurally generated part: outer ring and holes in its centroid frame.
#[pyclass(frozen, from_py_object, module = "pgrasp")]
#[derive(Clone)]
struct Part {
    inner: parts::Part,
}

#[pymethods]
impl Part {
    /// Generates one part of `family` (e.g. "gear", "lbracket").
    #[staticmethod]
    fn generate(seed: u64, family: &str) -> PyResult<Part> {
        parts::generate_part(seed, family).map(|inner| Part { inner }).map_err(err)
    }

    #[staticmethod]
    fn corpus(seed: u64, count: usize) -> Vec<Part> {
        parts::generate_corpus(seed, count).into_iter().map(|inner| Part { inner }).collect()
    }

    #[getter]
    fn part_id(&self) -> u64 {
        self.inner.part_id
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn height(&self) -> f64 {
        self.inner.height
    }

    #[getter]
    fn outer(&self) -> Vec<(f64, f64)> {
        self.inner.outer.iter().map(|p| (p.x, p.y)).collect()
    }

    #[getter]
    fn holes(&self) -> Vec<Vec<(f64, f64)>> {
        self.inner.holes.iter().map(|h| h.iter().map(|p| (p.x, p.y)).collect()).collect()
    }

    /// `(min_x, min_y, max_x, max_y)` of the posed part in world coordinates.
    fn bounding_box(&self, pose_: PoseT) -> (f64, f64, f64, f64) {
        let r = parts::bounding_box(&self.inner, &pose(pose_));
        (r.min_x, r.min_y, r.max_x, r.max_y)
    }

    fn contains(&self, pose_: PoseT, x: f64, y: f64) -> bool {
        parts::silhouette_contains(&self.inner, &pose(pose_), Point2::new(x, y))
    }

    fn mirrored(&self) -> Part {
        Part { inner: self.inner.mirrored() }
    }

    fn __repr__(&self) -> String {
        format!("Part(id={}, family={}, vertices={})", self.inner.part_id, self.inner.family.name(), self.inner.vertex_count())
    }
}

/// Runs the pinch oracle with default physics parameters.
#[pyfunction]
fn simulate_pinch<'py>(py: Python<'py>, part: &Part, pose_: PoseT, grasp_: Quad) -> PyResult<Bound<'py, PyDict>> {
    let out = physics::simulate_pinch(&part.inner, &pose(pose_), &grasp(grasp_), &PhysicsParams::default()).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("success", out.success)?;
    d.set_item("object_displacement", quad(&out.object_displacement))?;
    d.set_item("grasp_displacement", quad(&out.grasp_displacement))?;
    d.set_item("friction_margin", out.friction_margin)?;
    d.set_item("contact_count", out.contact_count)?;
    d.set_item("failure", out.failure.map(|f| format!("{f:?}")))?;
    d.set_item("final_separation", out.final_separation)?;
    Ok(d)
}

/// Object displacement -> grasp displacement in the object frame.
#[pyfunction]
fn displacement_to_grasp_frame(pose_: PoseT, delta_p: Quad, grasp_: Quad) -> Quad {
    let p = pose(pose_);
    let d = Displacement { dx: delta_p.0, dy: delta_p.1, dz: delta_p.2, dtheta: delta_p.3 };
    quad(&physics::displacement_to_grasp_frame(&p, &d, &grasp(grasp_).to_world(&p)))
}

/// Commanded placement pose that lands the object at `target` when the
/// in-hand displacement equals `mu`.
#[pyfunction]
fn correct_placement(target: PoseT, grasp_offset: (f64, f64), mu: Quad) -> PoseT {
    let m = Displacement { dx: mu.0, dy: mu.1, dz: mu.2, dtheta: mu.3 };
    let p = planner::correct_placement(&pose(target), Point2::new(grasp_offset.0, grasp_offset.1), &m);
    (p.x, p.y, p.theta)
}

#[pyfunction]
fn pool_size(n: usize, top_fraction: f64) -> usize {
    planner::pool_size(n, top_fraction)
}

/// Labelled grasp records, held in memory.
#[pyclass(frozen, module = "pgrasp")]
struct Dataset {
    records: Vec<GraspRecord>,
    manifest: Manifest,
}

#[pymethods]
impl Dataset {
    /// Collects `grasps_per_part` labelled grasps per part. The output does
    /// not depend on `workers`.
    #[staticmethod]
    #[pyo3(signature = (parts, grasps_per_part, seed, workers = 0))]
    fn collect(py: Python<'_>, parts: Vec<Part>, grasps_per_part: usize, seed: u64, workers: usize) -> PyResult<Dataset> {
        let cfg = CollectConfig {
            grasps_per_part,
            master_seed: seed,
            physics: PhysicsParams::default(),
            sensor: SensorConfig::default(),
            workers,
        };
        let parts: Vec<parts::Part> = parts.into_iter().map(|p| p.inner).collect();
        let c = py.detach(|| dataset::collect(&parts, &cfg)).map_err(err)?;
        let manifest = Manifest::for_collection(&c, &cfg);
        Ok(Dataset { records: c.records, manifest })
    }

    /// Reads a dataset and verifies it against its manifest.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Dataset> {
        let (records, manifest) = dataset::read_verified(&path).map_err(err)?;
        Ok(Dataset { records, manifest })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        dataset::write_dataset(&path, &self.records, &self.manifest).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let b = dataset::encode(&self.records).map_err(err)?;
        Ok(PyBytes::new(py, &b))
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    #[getter]
    fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    /// Record `i` without its images.
    fn record<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = self.records.get(i).ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(i))?;
        let d = PyDict::new(py);
        d.set_item("part_id", r.part_id)?;
        d.set_item("pose", (r.pose.x, r.pose.y, r.pose.theta))?;
        d.set_item("grasp", (r.grasp.gx, r.grasp.gy, r.grasp.gz, r.grasp.gtheta))?;
        d.set_item("success", r.success)?;
        d.set_item("object_displacement", quad(&r.object_displacement))?;
        d.set_item("grasp_displacement", quad(&r.grasp_displacement))?;
        Ok(d)
    }

    /// Per-part LOWESS memory built from the successful records.
    fn lowess(&self) -> Lowess {
        Lowess { inner: CoreLowess::from_records(&self.records) }
    }
}

/// Kernel-weighted per-part displacement memory.
#[pyclass(module = "pgrasp")]
struct Lowess {
    inner: CoreLowess,
}

#[pymethods]
impl Lowess {
    #[new]
    #[pyo3(signature = (kernel_variance = None))]
    fn new(kernel_variance: Option<Quad>) -> PyResult<Lowess> {
        let k = kernel_variance.map(|k| [k.0, k.1, k.2, k.3]).unwrap_or(KERNEL_VARIANCE);
        CoreLowess::new(k).map(|inner| Lowess { inner }).map_err(err)
    }

    fn insert(&mut self, part_id: u64, key: Quad, delta_g: Quad) {
        self.inner.insert(part_id, [key.0, key.1, key.2, key.3], [delta_g.0, delta_g.1, delta_g.2, delta_g.3]);
    }

    /// `(mean, variance)` at a part-frame key; raises KeyError for parts
    /// without stored grasps.
    fn predict_key(&self, part_id: u64, key: Quad) -> PyResult<(Quad, Quad)> {
        let (m, v) = self.inner.predict_key(part_id, &[key.0, key.1, key.2, key.3]).map_err(err)?;
        Ok((arr(m), arr(v)))
    }

    fn predict(&self, part_id: u64, pose_: PoseT, grasp_: Quad) -> PyResult<(Quad, Option<Quad>)> {
        let p = self.inner.predict(part_id, &pose(pose_), &grasp(grasp_)).map_err(err)?;
        Ok((quad(&p.mean), p.variance.map(arr)))
    }
}

/// Grasp quality network.
#[pyclass(frozen, module = "pgrasp")]
struct Gqn {
    inner: CoreGqn,
}

#[pymethods]
impl Gqn {
    /// Freshly initialized (untrained) network.
    #[new]
    fn new(seed: u64) -> Gqn {
        Gqn { inner: CoreGqn::new(seed) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Gqn> {
        CoreGqn::load(&path).map(|inner| Gqn { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }
}

/// Grasp displacement network of one variant ("GCIP-M+V", "OCFI-M", ...).
#[pyclass(frozen, module = "pgrasp")]
struct Gdn {
    inner: CoreGdn,
}

fn variant(name: &str) -> PyResult<GdnVariant> {
    name.parse::<GdnVariant>().map_err(err)
}

#[pymethods]
impl Gdn {
    #[new]
    fn new(variant_name: &str, seed: u64) -> PyResult<Gdn> {
        Ok(Gdn { inner: CoreGdn::new(variant(variant_name)?, seed) })
    }

    #[staticmethod]
    fn load(variant_name: &str, path: PathBuf) -> PyResult<Gdn> {
        CoreGdn::load(variant(variant_name)?, &path).map(|inner| Gdn { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.name()
    }
}

fn plan_dict<'py>(py: Python<'py>, r: &PlanResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("grasp", (r.grasp.gx, r.grasp.gy, r.grasp.gz, r.grasp.gtheta))?;
    d.set_item("candidate_index", r.candidate_index)?;
    d.set_item("quality", r.quality)?;
    d.set_item("mu", r.mu.as_ref().map(quad))?;
    d.set_item("variance", r.variance.map(arr))?;
    d.set_item("scalar_variance", r.scalar_variance)?;
    d.set_item("candidates", r.candidates)?;
    d.set_item("pool_size", r.pool_size)?;
    Ok(d)
}

/// Highest-quality grasp among `n` sampled candidates.
#[pyfunction]
#[pyo3(signature = (part, pose_, gqn, n = 3200, seed = 0, noise_seed = 0))]
fn plan_quality_only<'py>(py: Python<'py>, part: &Part, pose_: PoseT, gqn: &Gqn, n: usize, seed: u64, noise_seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| {
            let scene = Scene::new(&part.inner, pose(pose_), SensorConfig::default(), noise_seed)?;
            planner::plan_quality_only(&scene, &gqn.inner, n, seed)
        })
        .map_err(err)?;
    plan_dict(py, &r)
}

/// Lowest predicted-variance grasp within the top `top_fraction` by quality.
#[pyfunction]
#[pyo3(signature = (part, pose_, gqn, gdn, n = 3200, top_fraction = 0.03, seed = 0, noise_seed = 0))]
#[allow(clippy::too_many_arguments)]
fn plan_precise<'py>(
    py: Python<'py>,
    part: &Part,
    pose_: PoseT,
    gqn: &Gqn,
    gdn: &Gdn,
    n: usize,
    top_fraction: f64,
    seed: u64,
    noise_seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| {
            let scene = Scene::new(&part.inner, pose(pose_), SensorConfig::default(), noise_seed)?;
            planner::plan_precise(&scene, &gqn.inner, &gdn.inner, n, top_fraction, seed)
        })
        .map_err(err)?;
    plan_dict(py, &r)
}

#[pymodule]
fn pgrasp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Part>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Lowess>()?;
    m.add_class::<Gqn>()?;
    m.add_class::<Gdn>()?;
    m.add_function(wrap_pyfunction!(simulate_pinch, m)?)?;
    m.add_function(wrap_pyfunction!(displacement_to_grasp_frame, m)?)?;
    m.add_function(wrap_pyfunction!(correct_placement, m)?)?;
    m.add_function(wrap_pyfunction!(pool_size, m)?)?;
    m.add_function(wrap_pyfunction!(plan_quality_only, m)?)?;
    m.add_function(wrap_pyfunction!(plan_precise, m)?)?;
    Ok(())
}
