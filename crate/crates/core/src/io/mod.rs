//! On-disk formats, and the scene directory layout that ties them together:
//!
//! ```text
//! scans/<scene_id>/cloud.ply
//! scans/<scene_id>/intrinsic.txt, image_size.txt, pose_<frame>.txt
//! annotations/<scene_id>.json
//! ```

pub mod annotations;
pub mod matrix;
pub mod ply;
pub mod trajectory;

pub use annotations::{read_annotations, write_annotations, AnnotationError, AnnotationFile};
pub use matrix::{read_matrix, write_matrix, MatrixFileError};
pub use ply::{read_ply, write_ply, PlyError, PlyFormat};
pub use trajectory::{read_trajectory, write_trajectory, TrajectoryError, TrajectoryOptions};

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scene::{SceneBundle, SceneError};

pub const CLOUD_FILE: &str = "cloud.ply";

#[derive(Debug, Error)]
pub enum SceneLoadError {
    #[error("cloud: {0}")]
    Ply(#[from] PlyError),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("annotations: {0}")]
    Annotations(#[from] AnnotationError),
    #[error("scene id mismatch: directory '{dir}' vs annotations '{file}'")]
    SceneIdMismatch { dir: String, file: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loaded scene plus non-fatal warnings from the readers.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub bundle: SceneBundle,
    pub warnings: Vec<String>,
}

pub fn annotations_path(annotations_root: &Path, scene_id: &str) -> PathBuf {
    annotations_root.join(format!("{scene_id}.json"))
}

/// Loads `scans_root/<scene_id>` and `annotations_root/<scene_id>.json`.
pub fn load_scene(
    scans_root: &Path,
    annotations_root: &Path,
    scene_id: &str,
    opts: &TrajectoryOptions,
) -> Result<LoadedScene, SceneLoadError> {
    let dir = scans_root.join(scene_id);
    let ply = read_ply(dir.join(CLOUD_FILE))?;
    let traj = read_trajectory(&dir, opts)?;
    let ann = read_annotations(annotations_path(annotations_root, scene_id))?;
    if ann.scene_id != scene_id {
        return Err(SceneLoadError::SceneIdMismatch {
            dir: scene_id.to_owned(),
            file: ann.scene_id,
        });
    }
    let mut warnings = ply.warnings;
    warnings.extend(
        traj.skipped
            .iter()
            .map(|s| format!("skipped frame {}: {}", s.frame_id, s.reason)),
    );
    let bundle = SceneBundle::new(scene_id, ply.cloud, traj.trajectory, ann.objects)?;
    Ok(LoadedScene { bundle, warnings })
}

/// Writes a scene in the layout read by [`load_scene`].
pub fn save_scene(
    bundle: &SceneBundle,
    scans_root: &Path,
    annotations_root: &Path,
    format: PlyFormat,
) -> Result<(), SceneLoadError> {
    let dir = scans_root.join(&bundle.scene_id);
    fs::create_dir_all(&dir)?;
    fs::create_dir_all(annotations_root)?;
    write_ply(&bundle.cloud, dir.join(CLOUD_FILE), format)?;
    write_trajectory(&dir, &bundle.trajectory, &TrajectoryOptions::default())?;
    let file = AnnotationFile {
        scene_id: bundle.scene_id.clone(),
        objects: bundle.annotations.clone(),
    };
    write_annotations(&file, annotations_path(annotations_root, &bundle.scene_id))?;
    Ok(())
}

/// Scene ids under `scans_root`, sorted.
pub fn list_scenes(scans_root: &Path) -> Result<Vec<String>, std::io::Error> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(scans_root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
