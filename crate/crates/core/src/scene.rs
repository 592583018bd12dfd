//! In-memory scene containers.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{rotation_deviation, CameraExtrinsic, CameraIntrinsics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("color count {colors} does not match point count {points}")]
    ColorCountMismatch { points: usize, colors: usize },
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("trajectory frame ids must be strictly increasing (frame {0})")]
    UnorderedFrames(u32),
    #[error("duplicate object id {0}")]
    DuplicateObjectId(u32),
    #[error("object {object_id}: {reason}")]
    InvalidAnnotation { object_id: u32, reason: String },
}

/// Point coordinates in meters with optional 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        Self { points, colors: None }
    }

    pub fn with_colors(points: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> Result<Self, SceneError> {
        if points.len() != colors.len() {
            return Err(SceneError::ColorCountMismatch {
                points: points.len(),
                colors: colors.len(),
            });
        }
        Ok(Self {
            points,
            colors: Some(colors),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point_f64(&self, i: usize) -> [f64; 3] {
        let p = self.points[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }
}

/// Intrinsics shared by every frame plus the ordered camera-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<CameraExtrinsic>,
}

impl Trajectory {
    pub fn new(intrinsics: CameraIntrinsics, frames: Vec<CameraExtrinsic>) -> Result<Self, SceneError> {
        if frames.is_empty() {
            return Err(SceneError::EmptyTrajectory);
        }
        for pair in frames.windows(2) {
            if pair[1].frame_id() <= pair[0].frame_id() {
                return Err(SceneError::UnorderedFrames(pair[1].frame_id()));
            }
        }
        Ok(Self { intrinsics, frames })
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.frame_id()).collect()
    }

    pub fn frame(&self, frame_id: u32) -> Option<&CameraExtrinsic> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id())
            .ok()
            .map(|i| &self.frames[i])
    }
}

/// Oriented box: `sizes` are full extents along the box's local x, y, z
/// axes, `rotation` maps local axes to world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub sizes: [f64; 3],
    pub rotation: Matrix3<f64>,
}

impl OrientedBox {
    pub fn axis_aligned(center: Vector3<f64>, sizes: [f64; 3]) -> Self {
        Self {
            center,
            sizes,
            rotation: Matrix3::identity(),
        }
    }

    pub fn local_to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * local + self.center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationShape {
    /// Indices into the scene cloud.
    Segmentation(Vec<u32>),
    OrientedBox(OrientedBox),
    PointAnchor(Vector3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    pub object_id: u32,
    pub shape: AnnotationShape,
}

impl ObjectAnnotation {
    pub fn segmentation(object_id: u32, indices: Vec<u32>) -> Self {
        Self {
            object_id,
            shape: AnnotationShape::Segmentation(indices),
        }
    }

    pub fn oriented_box(object_id: u32, b: OrientedBox) -> Self {
        Self {
            object_id,
            shape: AnnotationShape::OrientedBox(b),
        }
    }

    pub fn point(object_id: u32, p: Vector3<f64>) -> Self {
        Self {
            object_id,
            shape: AnnotationShape::PointAnchor(p),
        }
    }

    /// Checks shape invariants; segmentation bounds need the cloud size.
    pub fn validate(&self, cloud_len: Option<usize>) -> Result<(), SceneError> {
        let invalid = |reason: String| {
            Err(SceneError::InvalidAnnotation {
                object_id: self.object_id,
                reason,
            })
        };
        match &self.shape {
            AnnotationShape::Segmentation(indices) => {
                if indices.is_empty() {
                    return invalid("segmentation mask is empty".into());
                }
                let mut seen = HashSet::with_capacity(indices.len());
                for &i in indices {
                    if !seen.insert(i) {
                        return invalid(format!("duplicate point index {i}"));
                    }
                    if let Some(n) = cloud_len {
                        if i as usize >= n {
                            return invalid(format!("point index {i} out of bounds for {n} points"));
                        }
                    }
                }
            }
            AnnotationShape::OrientedBox(b) => {
                if b.sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return invalid(format!("box sizes must be positive, got {:?}", b.sizes));
                }
                if b.center.iter().any(|x| !x.is_finite()) {
                    return invalid("box center is not finite".into());
                }
                let dev = rotation_deviation(&b.rotation);
                if !(dev <= 1e-6) {
                    return invalid(format!("box rotation is not orthonormal (deviation {dev:.3e})"));
                }
            }
            AnnotationShape::PointAnchor(p) => {
                if p.iter().any(|x| !x.is_finite()) {
                    return invalid("anchor point is not finite".into());
                }
            }
        }
        Ok(())
    }

    /// Representative location: mask centroid, box center, or the anchor.
    pub fn center(&self, cloud: &PointCloud) -> Vector3<f64> {
        match &self.shape {
            AnnotationShape::Segmentation(indices) => {
                let sum = indices.iter().fold(Vector3::zeros(), |acc, &i| {
                    let p = cloud.point_f64(i as usize);
                    acc + Vector3::new(p[0], p[1], p[2])
                });
                sum / indices.len().max(1) as f64
            }
            AnnotationShape::OrientedBox(b) => b.center,
            AnnotationShape::PointAnchor(p) => *p,
        }
    }
}

/// One scan: cloud, camera trajectory and object annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub trajectory: Trajectory,
    pub annotations: Vec<ObjectAnnotation>,
}

impl SceneBundle {
    pub fn new(
        scene_id: impl Into<String>,
        cloud: PointCloud,
        trajectory: Trajectory,
        annotations: Vec<ObjectAnnotation>,
    ) -> Result<Self, SceneError> {
        if cloud.is_empty() {
            return Err(SceneError::EmptyCloud);
        }
        let mut ids = HashSet::new();
        for ann in &annotations {
            if !ids.insert(ann.object_id) {
                return Err(SceneError::DuplicateObjectId(ann.object_id));
            }
            ann.validate(Some(cloud.len()))?;
        }
        Ok(Self {
            scene_id: scene_id.into(),
            cloud,
            trajectory,
            annotations,
        })
    }

    pub fn object_ids(&self) -> Vec<u32> {
        self.annotations.iter().map(|a| a.object_id).collect()
    }

    pub fn annotation(&self, object_id: u32) -> Option<&ObjectAnnotation> {
        self.annotations.iter().find(|a| a.object_id == object_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn trajectory_requires_increasing_ids() {
        let f = |id| CameraExtrinsic::identity(id);
        assert!(Trajectory::new(k(), vec![f(0), f(2)]).is_ok());
        assert_eq!(Trajectory::new(k(), vec![f(2), f(2)]), Err(SceneError::UnorderedFrames(2)));
        assert_eq!(Trajectory::new(k(), vec![]), Err(SceneError::EmptyTrajectory));
        let t = Trajectory::new(k(), vec![f(1), f(5), f(9)]).unwrap();
        assert_eq!(t.frame(5).map(|e| e.frame_id()), Some(5));
        assert!(t.frame(4).is_none());
    }

    #[test]
    fn bundle_checks_annotations() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 4]);
        let traj = Trajectory::new(k(), vec![CameraExtrinsic::identity(0)]).unwrap();
        let ok = vec![ObjectAnnotation::segmentation(1, vec![0, 3])];
        assert!(SceneBundle::new("s", cloud.clone(), traj.clone(), ok).is_ok());
        let dup = vec![
            ObjectAnnotation::point(1, Vector3::zeros()),
            ObjectAnnotation::point(1, Vector3::zeros()),
        ];
        assert_eq!(
            SceneBundle::new("s", cloud.clone(), traj.clone(), dup),
            Err(SceneError::DuplicateObjectId(1))
        );
        for bad in [
            ObjectAnnotation::segmentation(2, vec![]),
            ObjectAnnotation::segmentation(2, vec![1, 1]),
            ObjectAnnotation::segmentation(2, vec![4]),
            ObjectAnnotation::oriented_box(2, OrientedBox::axis_aligned(Vector3::zeros(), [1.0, 0.0, 1.0])),
        ] {
            assert!(matches!(
                SceneBundle::new("s", cloud.clone(), traj.clone(), vec![bad]),
                Err(SceneError::InvalidAnnotation { object_id: 2, .. })
            ));
        }
        assert_eq!(
            SceneBundle::new("s", PointCloud::default(), traj, vec![]),
            Err(SceneError::EmptyCloud)
        );
    }

    #[test]
    fn colors_must_match() {
        assert!(PointCloud::with_colors(vec![[0.0; 3]; 2], vec![[0; 3]]).is_err());
    }
}
