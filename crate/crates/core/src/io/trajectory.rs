//! Camera trajectories in the exported RGB-D scan layout: `intrinsic.txt`
//! (3x3 or 4x4, row-major) plus one camera-to-world 4x4 matrix per frame in
//! files named by a `%d` pattern such as `pose_%d.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use thiserror::Error;

use crate::geometry::{nearest_rotation, rotation_deviation, CameraExtrinsic, CameraIntrinsics, GeometryError};
use crate::scene::Trajectory;

pub const INTRINSIC_FILE: &str = "intrinsic.txt";
pub const IMAGE_SIZE_FILE: &str = "image_size.txt";
pub const DEFAULT_POSE_PATTERN: &str = "pose_%d.txt";

/// Rotations further than this from orthonormal are rejected rather than
/// repaired.
const REPAIR_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("missing intrinsics file {0}")]
    MissingIntrinsics(PathBuf),
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("no valid poses in {0}")]
    NoValidPoses(PathBuf),
    #[error("pose pattern {0:?} must contain exactly one %d")]
    BadPattern(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryOptions {
    pub pose_pattern: String,
    /// Overrides `image_size.txt` and the principal-point estimate.
    pub image_size: Option<(u32, u32)>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            pose_pattern: DEFAULT_POSE_PATTERN.to_owned(),
            image_size: None,
        }
    }
}

fn split_pattern(pattern: &str) -> Result<(&str, &str), TrajectoryError> {
    match pattern.split_once("%d") {
        Some((pre, post)) if !post.contains("%d") => Ok((pre, post)),
        _ => Err(TrajectoryError::BadPattern(pattern.to_owned())),
    }
}

fn parse_numbers(path: &Path, text: &str) -> Result<Vec<f64>, TrajectoryError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| TrajectoryError::Malformed {
                path: path.to_owned(),
                reason: format!("not a number: {tok:?}"),
            })
        })
        .collect()
}

fn read_intrinsics(dir: &Path, opts: &TrajectoryOptions) -> Result<CameraIntrinsics, TrajectoryError> {
    let path = dir.join(INTRINSIC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrajectoryError::MissingIntrinsics(path.clone()),
        _ => e.into(),
    })?;
    let nums = parse_numbers(&path, &text)?;
    let (fx, fy, cx, cy) = match nums.len() {
        9 => (nums[0], nums[4], nums[2], nums[5]),
        16 => (nums[0], nums[5], nums[2], nums[6]),
        n => {
            return Err(TrajectoryError::Malformed {
                path,
                reason: format!("expected 9 or 16 numbers, found {n}"),
            })
        }
    };
    let (width, height) = match opts.image_size {
        Some(size) => size,
        None => read_image_size(dir)?.unwrap_or_else(|| (estimate_extent(cx), estimate_extent(cy))),
    };
    Ok(CameraIntrinsics::new(fx, fy, cx, cy, width, height)?)
}

/// Image extent implied by a centered principal point.
fn estimate_extent(c: f64) -> u32 {
    let twice = (2.0 * c).ceil().max(0.0) as u32;
    twice.max(c.floor().max(0.0) as u32 + 1)
}

fn read_image_size(dir: &Path) -> Result<Option<(u32, u32)>, TrajectoryError> {
    let path = dir.join(IMAGE_SIZE_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let parts: Vec<u32> = text
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| TrajectoryError::Malformed {
            path: path.clone(),
            reason: "expected 'width height'".into(),
        })?;
    match parts.as_slice() {
        [w, h] => Ok(Some((*w, *h))),
        _ => Err(TrajectoryError::Malformed {
            path,
            reason: "expected 'width height'".into(),
        }),
    }
}

/// Frame skipped while loading, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFrame {
    pub frame_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRead {
    pub trajectory: Trajectory,
    pub skipped: Vec<SkippedFrame>,
}

fn parse_pose(path: &Path, frame_id: u32) -> Result<Result<CameraExtrinsic, String>, TrajectoryError> {
    let text = fs::read_to_string(path)?;
    let nums = parse_numbers(path, &text)?;
    if nums.len() != 16 {
        return Err(TrajectoryError::Malformed {
            path: path.to_owned(),
            reason: format!("expected 16 numbers, found {}", nums.len()),
        });
    }
    if nums.iter().any(|x| !x.is_finite()) {
        return Ok(Err("non-finite pose".into()));
    }
    let m = Matrix4::from_row_slice(&nums);
    let mut rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
    let deviation = rotation_deviation(&rotation);
    if deviation > 1e-6 {
        if deviation > REPAIR_TOLERANCE {
            return Ok(Err(format!("rotation deviates from orthonormal by {deviation:.3e}")));
        }
        // Text files round the matrix; snap back onto SO(3).
        match nearest_rotation(&rotation) {
            Some(r) => rotation = r,
            None => return Ok(Err("rotation repair failed".into())),
        }
    }
    Ok(CameraExtrinsic::new(rotation, translation, frame_id).map_err(|e| e.to_string()))
}

pub fn read_trajectory(dir: impl AsRef<Path>, opts: &TrajectoryOptions) -> Result<TrajectoryRead, TrajectoryError> {
    let dir = dir.as_ref();
    let intrinsics = read_intrinsics(dir, opts)?;
    let (prefix, suffix) = split_pattern(&opts.pose_pattern)?;
    let mut indexed: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(suffix)) else {
            continue;
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        if let Ok(idx) = digits.parse::<u32>() {
            indexed.push((idx, entry.path()));
        }
    }
    indexed.sort_by_key(|(idx, _)| *idx);
    indexed.dedup_by_key(|(idx, _)| *idx);

    let mut frames = Vec::with_capacity(indexed.len());
    let mut skipped = Vec::new();
    for (idx, path) in indexed {
        match parse_pose(&path, idx)? {
            Ok(e) => frames.push(e),
            Err(reason) => {
                log::warn!("{}: frame {idx} skipped: {reason}", dir.display());
                skipped.push(SkippedFrame { frame_id: idx, reason });
            }
        }
    }
    if frames.is_empty() {
        return Err(TrajectoryError::NoValidPoses(dir.to_owned()));
    }
    let trajectory = Trajectory::new(intrinsics, frames).expect("frames sorted and non-empty");
    Ok(TrajectoryRead { trajectory, skipped })
}

/// Writes `intrinsic.txt`, `image_size.txt` and one pose file per frame.
/// Values use the shortest representation that parses back exactly.
pub fn write_trajectory(dir: impl AsRef<Path>, traj: &Trajectory, opts: &TrajectoryOptions) -> Result<(), TrajectoryError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (prefix, suffix) = split_pattern(&opts.pose_pattern)?;
    let k = &traj.intrinsics;
    fs::write(
        dir.join(INTRINSIC_FILE),
        format!("{} 0 {}\n0 {} {}\n0 0 1\n", k.fx, k.cx, k.fy, k.cy),
    )?;
    fs::write(dir.join(IMAGE_SIZE_FILE), format!("{} {}\n", k.width, k.height))?;
    for e in &traj.frames {
        let m = e.to_matrix4();
        let mut text = String::new();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(dir.join(format!("{prefix}{}{suffix}", e.frame_id())), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    const IDENTITY: &str = "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n";

    #[test]
    fn identity_pose_and_invalid_frames() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "intrinsic.txt", "500 0 320\n0 500 240\n0 0 1\n");
        write(tmp.path(), "pose_0.txt", IDENTITY);
        write(tmp.path(), "pose_1.txt", "-inf -inf -inf -inf\n-inf -inf -inf -inf\n-inf -inf -inf -inf\n0 0 0 1\n");
        write(tmp.path(), "pose_10.txt", IDENTITY);
        write(tmp.path(), "notes.txt", "ignored");
        let read = read_trajectory(tmp.path(), &TrajectoryOptions::default()).unwrap();
        let t = &read.trajectory;
        assert_eq!(t.frame_ids(), vec![0, 10]);
        assert_eq!(*t.frames[0].rotation(), Matrix3::identity());
        assert_eq!(*t.frames[0].translation(), Vector3::zeros());
        assert_eq!(read.skipped.len(), 1);
        assert_eq!((t.intrinsics.width, t.intrinsics.height), (640, 480));
    }

    #[test]
    fn scannet_style_4x4_intrinsics_and_pattern() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "intrinsic.txt", "1169.6 0 646.3 0\n0 1167.1 489.9 0\n0 0 1 0\n0 0 0 1\n");
        write(tmp.path(), "image_size.txt", "1296 968\n");
        write(tmp.path(), "3.txt", IDENTITY);
        let opts = TrajectoryOptions {
            pose_pattern: "%d.txt".into(),
            image_size: None,
        };
        let read = read_trajectory(tmp.path(), &opts).unwrap();
        let k = read.trajectory.intrinsics;
        assert_eq!((k.fx, k.fy, k.cx, k.cy, k.width, k.height), (1169.6, 1167.1, 646.3, 489.9, 1296, 968));
    }

    #[test]
    fn rounded_rotation_is_repaired() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "intrinsic.txt", "500 0 320\n0 500 240\n0 0 1\n");
        write(
            tmp.path(),
            "pose_0.txt",
            "0.955336 -0.29552 0 1\n0.29552 0.955336 0 2\n0 0 1 3\n0 0 0 1\n",
        );
        let read = read_trajectory(tmp.path(), &TrajectoryOptions::default()).unwrap();
        assert!(rotation_deviation(read.trajectory.frames[0].rotation()) < 1e-12);
    }

    #[test]
    fn errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_trajectory(tmp.path(), &TrajectoryOptions::default()),
            Err(TrajectoryError::MissingIntrinsics(_))
        ));
        write(tmp.path(), "intrinsic.txt", "500 0 320\n0 500 240\n0 0 1\n");
        assert!(matches!(
            read_trajectory(tmp.path(), &TrajectoryOptions::default()),
            Err(TrajectoryError::NoValidPoses(_))
        ));
        write(tmp.path(), "pose_0.txt", "1 2 3");
        assert!(matches!(
            read_trajectory(tmp.path(), &TrajectoryOptions::default()),
            Err(TrajectoryError::Malformed { .. })
        ));
        let bad = TrajectoryOptions {
            pose_pattern: "pose.txt".into(),
            image_size: None,
        };
        assert!(matches!(read_trajectory(tmp.path(), &bad), Err(TrajectoryError::BadPattern(_))));
    }
}
