//! Python bindings: load a scene and its intersection matrix once, then
//! select poses, align clouds and serialize pose prompts in process.
//!
//! Every call runs the same core functions as the `egopose` CLI with the
//! same seed derivation, so results are bit-identical to
//! `select-pose` followed by `align`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use numpy::ndarray::Array2;
use numpy::{IntoPyArray, PyArray2};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use egopose_core::align::{align_transform, serialize_pose_prompt, PromptConvention, DEFAULT_PROMPT_PRECISION};
use egopose_core::io::{self, TrajectoryOptions};
use egopose_core::policy::{choose_pose, ClipRatio, PolicyError, SelectionPolicy};
use egopose_core::{seed, CameraExtrinsic, IntersectionMatrix, PointCloud, Trajectory};

create_exception!(egopose, EgoposeError, PyException, "Base class for every egopose error.");
create_exception!(egopose, HandleClosed, EgoposeError, "The scene handle was closed.");
create_exception!(egopose, UnknownFrame, EgoposeError, "Frame id not in the scene trajectory.");
create_exception!(egopose, UnknownObject, EgoposeError);
create_exception!(egopose, NoCandidates, EgoposeError);
create_exception!(egopose, EmptyTrajectory, EgoposeError);
create_exception!(egopose, InvalidClipRatio, EgoposeError);
create_exception!(egopose, PolicyFailure, EgoposeError, "Any other pose-selection error.");
create_exception!(egopose, PlyError, EgoposeError);
create_exception!(egopose, TrajectoryError, EgoposeError);
create_exception!(egopose, MatrixFileError, EgoposeError);

fn policy_err(e: PolicyError) -> PyErr {
    let msg = e.to_string();
    match e {
        PolicyError::UnknownObject(_) => UnknownObject::new_err(msg),
        PolicyError::NoCandidates => NoCandidates::new_err(msg),
        PolicyError::EmptyTrajectory => EmptyTrajectory::new_err(msg),
        PolicyError::InvalidClipRatio(_) => InvalidClipRatio::new_err(msg),
        _ => PolicyFailure::new_err(msg),
    }
}

struct Loaded {
    scene_id: String,
    cloud: PointCloud,
    trajectory: Trajectory,
    matrix: IntersectionMatrix,
}

impl Loaded {
    fn frame(&self, frame_id: u32) -> PyResult<&CameraExtrinsic> {
        self.trajectory
            .frame(frame_id)
            .ok_or_else(|| UnknownFrame::new_err(format!("frame {frame_id} not in trajectory of {}", self.scene_id)))
    }
}

/// A loaded scan plus its intersection matrix. Safe to share across
/// threads; `close` releases the data and later calls raise
/// `HandleClosed`. Closing twice is a no-op.
#[pyclass(frozen, module = "egopose")]
struct SceneHandle {
    inner: RwLock<Option<Arc<Loaded>>>,
}

impl SceneHandle {
    fn get(&self) -> PyResult<Arc<Loaded>> {
        self.inner
            .read()
            .expect("handle lock")
            .clone()
            .ok_or_else(|| HandleClosed::new_err("scene handle is closed"))
    }
}

#[pymethods]
impl SceneHandle {
    #[getter]
    fn scene_id(&self) -> PyResult<String> {
        Ok(self.get()?.scene_id.clone())
    }

    #[getter]
    fn frame_count(&self) -> PyResult<usize> {
        Ok(self.get()?.trajectory.frames.len())
    }

    #[getter]
    fn frame_ids(&self) -> PyResult<Vec<u32>> {
        Ok(self.get()?.trajectory.frame_ids())
    }

    #[getter]
    fn object_ids(&self) -> PyResult<Vec<u32>> {
        Ok(self.get()?.matrix.object_ids().to_vec())
    }

    #[getter]
    fn point_count(&self) -> PyResult<usize> {
        Ok(self.get()?.cloud.len())
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.read().expect("handle lock").is_none()
    }

    fn close(&self) {
        self.inner.write().expect("handle lock").take();
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(&self, _exc_type: Py<PyAny>, _exc: Py<PyAny>, _tb: Py<PyAny>) -> bool {
        self.close();
        false
    }

    fn __repr__(&self) -> String {
        match self.get() {
            Ok(l) => format!(
                "SceneHandle({:?}, frames={}, objects={})",
                l.scene_id,
                l.trajectory.frames.len(),
                l.matrix.n_objects()
            ),
            Err(_) => "SceneHandle(closed)".into(),
        }
    }
}

/// `scans_dir` is either the scans root holding `<scene_id>/` or the scene
/// directory itself; the scene id comes from the matrix file.
fn scene_dir(scans_dir: &Path, scene_id: &str) -> PathBuf {
    let nested = scans_dir.join(scene_id);
    if nested.is_dir() {
        nested
    } else {
        scans_dir.to_owned()
    }
}

fn load(scans_dir: &Path, matrix_path: &Path) -> PyResult<Loaded> {
    let matrix = io::read_matrix(matrix_path).map_err(|e| MatrixFileError::new_err(e.to_string()))?;
    let dir = scene_dir(scans_dir, matrix.scene_id());
    let ply = io::read_ply(dir.join(io::CLOUD_FILE)).map_err(|e| PlyError::new_err(e.to_string()))?;
    let traj =
        io::read_trajectory(&dir, &TrajectoryOptions::default()).map_err(|e| TrajectoryError::new_err(e.to_string()))?;
    Ok(Loaded {
        scene_id: matrix.scene_id().to_owned(),
        cloud: ply.cloud,
        trajectory: traj.trajectory,
        matrix,
    })
}

#[pyfunction]
fn load_scene(py: Python<'_>, scans_dir: PathBuf, matrix_path: PathBuf) -> PyResult<SceneHandle> {
    let loaded = py.detach(|| load(&scans_dir, &matrix_path))?;
    Ok(SceneHandle {
        inner: RwLock::new(Some(Arc::new(loaded))),
    })
}

fn parse_policy(policy: &str, clip_ratio: f64) -> PyResult<SelectionPolicy> {
    match policy {
        "top" => Ok(SelectionPolicy::Top),
        "clip" => Ok(SelectionPolicy::Clip(ClipRatio::new(clip_ratio).map_err(policy_err)?)),
        "random" => Ok(SelectionPolicy::Random),
        other => Err(PyValueError::new_err(format!("unknown policy '{other}'; expected top, clip or random"))),
    }
}

fn parse_convention(convention: &str) -> PyResult<PromptConvention> {
    match convention {
        "verbatim" => Ok(PromptConvention::Verbatim),
        "camera-axes" => Ok(PromptConvention::CameraAxes),
        other => Err(PyValueError::new_err(format!(
            "unknown convention '{other}'; expected verbatim or camera-axes"
        ))),
    }
}

/// Picks a frame for `object_id` and returns `(frame_id, coords)`, where
/// `coords` is the whole cloud in that frame's ego axes as a new C-contiguous
/// `float32` array of shape `(N, 3)`. The array owns its data; it is the only
/// copy made.
#[pyfunction]
#[pyo3(signature = (handle, object_id, policy = "clip", seed = 0, clip_ratio = ClipRatio::DEFAULT.value(), query_id = 0))]
fn select_and_align<'py>(
    py: Python<'py>,
    handle: &SceneHandle,
    object_id: u32,
    policy: &str,
    seed: u64,
    clip_ratio: f64,
    query_id: u64,
) -> PyResult<(u32, Bound<'py, PyArray2<f32>>)> {
    let loaded = handle.get()?;
    let policy = parse_policy(policy, clip_ratio)?;
    let (frame_id, coords) = py.detach(|| -> PyResult<(u32, Vec<f32>)> {
        let mut rng = seed::query_rng(seed, &loaded.scene_id, query_id);
        let choice = choose_pose(&loaded.matrix, &[object_id], policy, &mut rng).map_err(policy_err)?;
        let e = loaded.frame(choice.frame_id)?;
        let aligned = align_transform(&loaded.cloud, e, &loaded.scene_id).cloud;
        Ok((choice.frame_id, aligned.points.into_flattened()))
    })?;
    let n = coords.len() / 3;
    let array = Array2::from_shape_vec((n, 3), coords).expect("three coordinates per point");
    Ok((frame_id, array.into_pyarray(py)))
}

/// Pose prompt text for one frame, byte-identical to `egopose align
/// --variant prompt` without its trailing newline.
#[pyfunction]
#[pyo3(signature = (handle, frame_id, precision = DEFAULT_PROMPT_PRECISION, convention = "verbatim"))]
fn pose_prompt(handle: &SceneHandle, frame_id: u32, precision: usize, convention: &str) -> PyResult<String> {
    let loaded = handle.get()?;
    let convention = parse_convention(convention)?;
    Ok(serialize_pose_prompt(loaded.frame(frame_id)?, precision, convention).text)
}

#[pymodule]
fn egopose(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<SceneHandle>()?;
    m.add_function(wrap_pyfunction!(load_scene, m)?)?;
    m.add_function(wrap_pyfunction!(select_and_align, m)?)?;
    m.add_function(wrap_pyfunction!(pose_prompt, m)?)?;
    m.add("EgoposeError", py.get_type::<EgoposeError>())?;
    m.add("HandleClosed", py.get_type::<HandleClosed>())?;
    m.add("UnknownFrame", py.get_type::<UnknownFrame>())?;
    m.add("UnknownObject", py.get_type::<UnknownObject>())?;
    m.add("NoCandidates", py.get_type::<NoCandidates>())?;
    m.add("EmptyTrajectory", py.get_type::<EmptyTrajectory>())?;
    m.add("InvalidClipRatio", py.get_type::<InvalidClipRatio>())?;
    m.add("PolicyFailure", py.get_type::<PolicyFailure>())?;
    m.add("PlyError", py.get_type::<PlyError>())?;
    m.add("TrajectoryError", py.get_type::<TrajectoryError>())?;
    m.add("MatrixFileError", py.get_type::<MatrixFileError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
