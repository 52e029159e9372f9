//! Python bindings: open and build projects, shape single parts, and read
//! meshes back as plain lists.
//!
//! ```python
//! import critter
//! path = critter.write_fixture("/tmp/fox", "seven_part")
//! project = critter.Project(path)
//! project.run("complete")
//! project.export("/tmp/fox/out")
//! ```

use std::path::PathBuf;
use std::sync::Mutex;

use critter_core::fixtures::{self, FixturePart};
use critter_core::geometry::{self, Point2, Point3, TriangleMesh};
use critter_core::inpaint::Hooks;
use critter_core::optimizer::{shape_part as core_shape_part, ShapeConfig};
use critter_core::part_builder::{build_part as core_build_part, AnnotationSet};
use critter_core::pipeline::Pipeline;
use critter_core::project::{save_project, Stage};
use critter_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(critter, CritterError, PyException, "Raised when a pipeline step fails.");

fn py_err(e: Error) -> PyErr {
    CritterError::new_err(e.to_string())
}

fn parse_stage(name: &str) -> PyResult<Stage> {
    name.parse().map_err(|e: Error| PyValueError::new_err(e.to_string()))
}

fn outline(points: Vec<(f64, f64)>) -> Vec<Point2> {
    points.into_iter().map(|(x, y)| Point2::new(x, y)).collect()
}

/// A triangle mesh with read-only accessors.
#[pyclass(frozen)]
pub struct Mesh {
    inner: TriangleMesh,
}

#[pymethods]
impl Mesh {
    #[getter]
    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.positions().iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<(usize, usize, usize)> {
        self.inner.faces().iter().map(|f| (f[0], f[1], f[2])).collect()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    /// True when every edge has exactly two faces.
    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn is_oriented_manifold(&self) -> bool {
        self.inner.is_oriented_manifold()
    }

    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic() as i64
    }

    /// Largest |z| over the vertices.
    fn max_depth(&self) -> f64 {
        self.inner.positions().iter().map(|p| p.z.abs()).fold(0.0, f64::max)
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, faces={})", self.inner.vertex_count(), self.inner.face_count())
    }
}

/// A project on disk and the pipeline state built from it.
#[pyclass]
pub struct Project {
    inner: Mutex<Pipeline>,
}

impl Project {
    fn pipeline(&self) -> std::sync::MutexGuard<'_, Pipeline> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[pymethods]
impl Project {
    /// Loads `project.json`, verifying the drawing's hash.
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let p = Pipeline::open(&path).map_err(py_err)?;
        Ok(Self { inner: Mutex::new(p) })
    }

    /// Latest stage whose results are current.
    #[getter]
    fn stage(&self) -> String {
        self.pipeline().stage().to_string()
    }

    #[getter]
    fn part_ids(&self) -> Vec<String> {
        self.pipeline().project.file.parts.iter().map(|p| p.id.clone()).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.pipeline().project.file.seed
    }

    #[setter]
    fn set_seed(&self, seed: u64) {
        self.pipeline().project.file.seed = seed;
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.pipeline().warnings.clone()
    }

    /// Runs the pipeline up to `until` (a stage name or verb). Stages whose
    /// inputs did not change are skipped.
    #[pyo3(signature = (until="complete"))]
    fn run(&self, py: Python<'_>, until: &str) -> PyResult<String> {
        let until = parse_stage(until)?;
        py.detach(|| {
            let mut p = self.pipeline();
            p.run(until, Hooks::default())?;
            Ok(p.stage().to_string())
        })
        .map_err(py_err)
    }

    /// Shaping energy of each part, in `part_ids` order.
    fn part_energies(&self) -> Vec<f64> {
        self.pipeline().part_energies()
    }

    /// The final mesh, once the pipeline is complete.
    fn final_mesh(&self) -> Option<Mesh> {
        self.pipeline().final_mesh().map(|tm| Mesh { inner: tm.mesh.clone() })
    }

    /// Flat `positions`, `faces`, per-corner `uvs` and per-face `pages` of
    /// a stage's result.
    fn preview<'py>(&self, py: Python<'py>, stage: &str) -> PyResult<Bound<'py, PyDict>> {
        let m = self.pipeline().preview(parse_stage(stage)?).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("positions", m.positions)?;
        d.set_item("faces", m.faces)?;
        d.set_item("uvs", m.uvs)?;
        d.set_item("pages", m.pages)?;
        Ok(d)
    }

    /// Writes the OBJ, material and texture pages; returns their paths.
    fn export<'py>(&self, py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let files = self.pipeline().export(&dir).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mesh", files.mesh)?;
        d.set_item("material", files.material)?;
        d.set_item("pages", files.pages)?;
        Ok(d)
    }

    /// Saves the project, including checkpoints, back to its file.
    fn save(&self) -> PyResult<()> {
        let p = self.pipeline();
        save_project(&p.project.path, &p.project.file).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.pipeline().project.file.to_json()
    }

    fn __repr__(&self) -> String {
        let p = self.pipeline();
        format!("Project({:?}, stage={}, parts={})", p.project.path, p.stage(), p.project.file.parts.len())
    }
}

/// Angle in radians between two normals, ignoring their lengths.
#[pyfunction]
fn angle_between_normals(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    geometry::angle_between_normals(&Point3::new(a.0, a.1, a.2), &Point3::new(b.0, b.1, b.2))
}

/// Triangulates a closed outline and doubles it into a flat two-sided part.
#[pyfunction]
#[pyo3(signature = (outline_points, target_faces=800, thickness=1.0))]
fn build_part(outline_points: Vec<(f64, f64)>, target_faces: usize, thickness: f64) -> PyResult<Mesh> {
    let mut ann = AnnotationSet::new(outline(outline_points));
    ann.thickness = thickness;
    let part = core_build_part(&ann, target_faces).map_err(py_err)?;
    Ok(Mesh { inner: part.mesh })
}

/// Builds and inflates one part with default settings.
#[pyfunction]
#[pyo3(signature = (outline_points, thickness=1.0, target_faces=800, seed_bias=None))]
fn shape_part(
    py: Python<'_>,
    outline_points: Vec<(f64, f64)>,
    thickness: f64,
    target_faces: usize,
    seed_bias: Option<f64>,
) -> PyResult<Mesh> {
    let mut ann = AnnotationSet::new(outline(outline_points));
    ann.thickness = thickness;
    let mut cfg = ShapeConfig {
        target_faces,
        ..ShapeConfig::default()
    };
    if let Some(b) = seed_bias {
        cfg.optimizer.seed_bias = b;
    }
    let shaped = py.detach(|| core_shape_part(&ann, &cfg)).map_err(py_err)?;
    Ok(Mesh { inner: shaped.part.mesh })
}

/// Writes a synthetic drawing and project (`two_part` or `seven_part`) into
/// `dir`; returns the project path.
#[pyfunction]
#[pyo3(signature = (dir, kind="two_part", size=160, target_faces=200))]
fn write_fixture(dir: PathBuf, kind: &str, size: u32, target_faces: usize) -> PyResult<PathBuf> {
    let parts: Vec<FixturePart> = match kind {
        "two_part" => fixtures::two_part_parts(),
        "seven_part" => fixtures::seven_part_parts(),
        _ => return Err(PyValueError::new_err(format!("unknown fixture `{kind}`"))),
    };
    fixtures::write_fixture(&dir, &parts, size, target_faces).map_err(py_err)
}

#[pymodule]
fn critter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CritterError", m.py().get_type::<CritterError>())?;
    m.add("STAGES", Stage::ALL.map(|s| s.name()).to_vec())?;
    m.add_class::<Mesh>()?;
    m.add_class::<Project>()?;
    m.add_function(wrap_pyfunction!(angle_between_normals, m)?)?;
    m.add_function(wrap_pyfunction!(build_part, m)?)?;
    m.add_function(wrap_pyfunction!(shape_part, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture, m)?)?;
    Ok(())
}
