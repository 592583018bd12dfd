//! Ego-pose recovery and alignment for language queries over indoor scans.
//!
//! [`intersection`] scores how much of each annotated object every camera
//! frame of a scan sees, [`policy`] picks one frame per query from those
//! scores, and [`align`] re-expresses clouds, token features and prompts in
//! that frame's ego axes.

pub mod align;
pub mod geometry;
pub mod intersection;
pub mod io;
pub mod llm;
pub mod policy;
pub mod scene;
pub mod seed;
pub mod synth;

pub use geometry::{CameraExtrinsic, CameraIntrinsics, Frustum, GeometryError};
pub use intersection::{IntersectionConfig, IntersectionError, IntersectionMatrix, ZBuffer};
pub use scene::{AnnotationShape, ObjectAnnotation, OrientedBox, PointCloud, SceneBundle, Trajectory};
