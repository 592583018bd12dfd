//! Re-expressing scene data in the ego frame of a chosen camera.
//!
//! The ego frame has its origin at the camera center, +x along the optical
//! axis (front), +y to the camera's left and +z up in the image.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{ego_rotation, CameraExtrinsic};
use crate::scene::PointCloud;

/// Tokens closer than this to the camera center get zero angles.
pub const ORIGIN_RADIUS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("no tokens to encode")]
    NoTokens,
    #[error("malformed pose prompt: {0}")]
    MalformedPrompt(String),
}

/// World-to-ego map `p -> U R^T (p - t)` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoTransform {
    linear: Matrix3<f64>,
    origin: Vector3<f64>,
}

impl EgoTransform {
    pub fn new(e: &CameraExtrinsic) -> Self {
        Self {
            linear: ego_rotation() * e.rotation().transpose(),
            origin: *e.translation(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * (p - self.origin)
    }

    #[inline]
    pub fn invert(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.linear.transpose() * q + self.origin
    }
}

/// Cloud in ego coordinates, with the source scene and frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCloud {
    pub cloud: PointCloud,
    pub scene_id: String,
    pub frame_id: u32,
}

pub fn align_points(points: &[Vector3<f64>], e: &CameraExtrinsic) -> Vec<Vector3<f64>> {
    let map = EgoTransform::new(e);
    points.iter().map(|p| map.apply(p)).collect()
}

/// Colors and point order are carried through unchanged.
pub fn align_transform(cloud: &PointCloud, e: &CameraExtrinsic, scene_id: &str) -> AlignedCloud {
    let map = EgoTransform::new(e);
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let q = map.apply(&Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
            [q.x as f32, q.y as f32, q.z as f32]
        })
        .collect();
    AlignedCloud {
        cloud: PointCloud {
            points,
            colors: cloud.colors.clone(),
        },
        scene_id: scene_id.to_owned(),
        frame_id: e.frame_id(),
    }
}

/// Per-token ego coordinates plus range, azimuth and elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatureBlock {
    /// `[x, y, z, range, azimuth, elevation]` per token.
    pub features: Vec<[f64; 6]>,
}

impl PoseFeatureBlock {
    pub const DIM: usize = 6;

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

fn spherical(q: &Vector3<f64>) -> [f64; 6] {
    let r = q.norm();
    let (azimuth, elevation) = if r < ORIGIN_RADIUS {
        (0.0, 0.0)
    } else {
        let az = q.y.atan2(q.x);
        let az = if az <= -std::f64::consts::PI { std::f64::consts::PI } else { az };
        (az, q.z.atan2(q.x.hypot(q.y)))
    };
    [q.x, q.y, q.z, r, azimuth, elevation]
}

pub fn encode_pose_features(tokens: &[Vector3<f64>], e: &CameraExtrinsic) -> Result<PoseFeatureBlock, AlignError> {
    if tokens.is_empty() {
        return Err(AlignError::NoTokens);
    }
    let map = EgoTransform::new(e);
    Ok(PoseFeatureBlock {
        features: tokens.iter().map(|p| spherical(&map.apply(p))).collect(),
    })
}

/// Which rotation columns name the up/front/left axes in a pose prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptConvention {
    /// up = R[:,2], front = R[:,0], left = R[:,1].
    #[default]
    Verbatim,
    /// Axes derived from the right-down-front camera: front = R[:,2],
    /// left = -R[:,0], up = -R[:,1].
    CameraAxes,
}

pub const DEFAULT_PROMPT_PRECISION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PosePrompt {
    pub text: String,
    pub precision: usize,
    pub convention: PromptConvention,
}

impl PosePrompt {
    /// Recovers position, up, front and left, in that order.
    pub fn parse(text: &str) -> Result<[f64; 12], AlignError> {
        let mut out = [0.0; 12];
        let mut rest = text;
        for (slot, label) in ["position", "up", "front", "left"].iter().enumerate() {
            if slot > 0 {
                rest = rest
                    .strip_prefix(", ")
                    .ok_or_else(|| AlignError::MalformedPrompt(format!("expected ', ' before {label}")))?;
            }
            rest = rest
                .strip_prefix(label)
                .and_then(|r| r.strip_prefix('['))
                .ok_or_else(|| AlignError::MalformedPrompt(format!("expected {label}[")))?;
            let close = rest
                .find(']')
                .ok_or_else(|| AlignError::MalformedPrompt(format!("unterminated {label}")))?;
            let values: Vec<&str> = rest[..close].split(", ").collect();
            if values.len() != 3 {
                return Err(AlignError::MalformedPrompt(format!("{label} needs 3 values")));
            }
            for (i, v) in values.iter().enumerate() {
                out[slot * 3 + i] = v
                    .parse()
                    .map_err(|_| AlignError::MalformedPrompt(format!("bad number {v:?}")))?;
            }
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            return Err(AlignError::MalformedPrompt(format!("trailing text {rest:?}")));
        }
        Ok(out)
    }
}

fn push_vector(out: &mut String, label: &str, v: &Vector3<f64>, precision: usize) {
    out.push_str(label);
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let mut s = String::new();
        let _ = write!(s, "{:.*}", precision, x);
        // "-0.00" reads as a sign flip; print it as zero.
        if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
            s.remove(0);
        }
        out.push_str(&s);
    }
    out.push(']');
}

pub fn serialize_pose_prompt(e: &CameraExtrinsic, precision: usize, convention: PromptConvention) -> PosePrompt {
    let r = e.rotation();
    let col = |i: usize| r.column(i).into_owned();
    let (up, front, left) = match convention {
        PromptConvention::Verbatim => (col(2), col(0), col(1)),
        PromptConvention::CameraAxes => (-col(1), col(2), -col(0)),
    };
    let mut text = String::new();
    push_vector(&mut text, "position", e.translation(), precision);
    text.push_str(", ");
    push_vector(&mut text, "up", &up, precision);
    text.push_str(", ");
    push_vector(&mut text, "front", &front, precision);
    text.push_str(", ");
    push_vector(&mut text, "left", &left, precision);
    PosePrompt {
        text,
        precision,
        convention,
    }
}
