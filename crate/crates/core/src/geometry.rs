//! Rigid-transform and pinhole projection primitives.
//!
//! Extrinsics are stored camera-to-world with the right-down-front camera
//! convention: camera +x points right in the image, +y down, +z along the
//! optical axis. World +z is up.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Default near cutoff in meters.
pub const DEFAULT_NEAR: f64 = 0.1;
/// Default far cutoff in meters.
pub const DEFAULT_FAR: f64 = 10.0;

/// Depths at or below this are treated as lying in the camera plane.
pub const DEPTH_EPSILON: f64 = 1e-9;

const ROTATION_TOLERANCE: f64 = 1e-6;
const GIMBAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix (deviation {deviation:.3e})")]
    InvalidRotation { deviation: f64 },
    #[error("non-finite value in extrinsic")]
    NonFiniteExtrinsic,
    #[error("invalid clip range: near={near}, far={far}")]
    InvalidClipRange { near: f64, far: f64 },
    #[error("degenerate depth {0} (point at or behind the camera plane)")]
    DegenerateDepth(f64),
    #[error("camera looks straight up or down; yaw is undefined")]
    GimbalDegenerate,
}

/// Pinhole intrinsics plus image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidIntrinsics(msg));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size must be positive, got {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by an integer factor.
    pub fn downscaled(&self, scale: u32) -> Result<Self, GeometryError> {
        if scale == 0 || !self.width.is_multiple_of(scale) || !self.height.is_multiple_of(scale) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "scale {scale} does not divide image size {}x{}",
                self.width, self.height
            )));
        }
        if scale == 1 {
            return Ok(*self);
        }
        let s = scale as f64;
        Self::new(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width / scale,
            self.height / scale,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn in_bounds(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && u < self.width as i64 && v < self.height as i64
    }
}

/// Camera-to-world rigid pose of one trajectory frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsic {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    frame_id: u32,
}

impl CameraExtrinsic {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        frame_id: u32,
    ) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFiniteExtrinsic);
        }
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
            frame_id,
        })
    }

    pub fn identity(frame_id: u32) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            frame_id,
        }
    }

    /// Builds a pose from a homogeneous camera-to-world matrix. The bottom
    /// row is ignored.
    pub fn from_matrix4(m: &Matrix4<f64>, frame_id: u32) -> Result<Self, GeometryError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation, frame_id)
    }

    /// Pose whose optical axis points from `eye` towards `target`, with image
    /// "down" as close as possible to world -z.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        frame_id: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or(GeometryError::GimbalDegenerate)?;
        let world_up = Vector3::z();
        let right = forward
            .cross(&world_up)
            .try_normalize(GIMBAL_TOLERANCE)
            .ok_or(GeometryError::GimbalDegenerate)?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye, frame_id)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn with_frame_id(mut self, frame_id: u32) -> Self {
        self.frame_id = frame_id;
        self
    }

    /// Camera optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Precomputed world-to-camera map for hot loops.
    pub fn world_to_camera_map(&self) -> WorldToCamera {
        let r = &self.rotation;
        WorldToCamera {
            // Rows of R^T are the columns of R.
            rows: [
                [r[(0, 0)], r[(1, 0)], r[(2, 0)]],
                [r[(0, 1)], r[(1, 1)], r[(2, 1)]],
                [r[(0, 2)], r[(1, 2)], r[(2, 2)]],
            ],
            origin: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

/// Largest absolute entry of `R^T R - I`, or of `det(R) - 1`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

/// Nearest proper rotation to `m` in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Some(r)
}

/// `R^T (p - t)` with a fixed evaluation order, shared by every projection
/// path so that Z-buffer depths are reproducible bit for bit.
#[derive(Debug, Clone, Copy)]
pub struct WorldToCamera {
    rows: [[f64; 3]; 3],
    origin: [f64; 3],
}

impl WorldToCamera {
    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let r = &self.rows;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Depth only.
    #[inline]
    pub fn depth(&self, p: [f64; 3]) -> f64 {
        let r = &self.rows[2];
        r[0] * (p[0] - self.origin[0]) + r[1] * (p[1] - self.origin[1]) + r[2] * (p[2] - self.origin[2])
    }
}

pub fn world_to_camera(p: &Vector3<f64>, e: &CameraExtrinsic) -> Vector3<f64> {
    let c = e.world_to_camera_map().apply([p.x, p.y, p.z]);
    Vector3::new(c[0], c[1], c[2])
}

pub fn camera_to_world(c: &Vector3<f64>, e: &CameraExtrinsic) -> Vector3<f64> {
    e.rotation * c + e.translation
}

/// Integer pixel plus camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub u: i64,
    pub v: i64,
    pub depth: f64,
}

/// Pixel coordinates before bounds checks, `floor(K c / z)`.
#[inline]
pub fn pixel_of(c: [f64; 3], k: &CameraIntrinsics) -> (i64, i64) {
    let u = (k.fx * c[0] / c[2] + k.cx).floor();
    let v = (k.fy * c[1] / c[2] + k.cy).floor();
    (u as i64, v as i64)
}

pub fn project_to_pixel(c: &Vector3<f64>, k: &CameraIntrinsics) -> Result<PixelHit, GeometryError> {
    if !(c.z > DEPTH_EPSILON) {
        return Err(GeometryError::DegenerateDepth(c.z));
    }
    let (u, v) = pixel_of([c.x, c.y, c.z], k);
    Ok(PixelHit { u, v, depth: c.z })
}

/// Plane `normal . p + offset`, positive on the inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Points exactly on an open plane are outside.
    pub open: bool,
}

impl Plane {
    fn from_camera(normal_cam: Vector3<f64>, offset_cam: f64, open: bool, e: &CameraExtrinsic) -> Self {
        let scale = normal_cam.norm();
        let n_cam = normal_cam / scale;
        let normal = e.rotation * n_cam;
        let offset = offset_cam / scale - normal.dot(&e.translation);
        Self { normal, offset, open }
    }

    #[inline]
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    #[inline]
    fn admits(&self, p: &Vector3<f64>) -> bool {
        let d = self.signed_distance(p);
        if self.open {
            d > 0.0
        } else {
            d >= 0.0
        }
    }
}

/// Visible pyramid of a pinhole camera clipped at `near` and `far`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    apex: Vector3<f64>,
    /// left, right, top, bottom, near, far
    planes: [Plane; 6],
    near: f64,
    far: f64,
}

impl Frustum {
    pub fn apex(&self) -> &Vector3<f64> {
        &self.apex
    }

    pub fn planes(&self) -> &[Plane; 6] {
        &self.planes
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    #[inline]
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.planes.iter().all(|plane| plane.admits(p))
    }
}

pub fn validate_clip_range(near: f64, far: f64) -> Result<(), GeometryError> {
    if !(near > 0.0 && near < far && far.is_finite()) {
        return Err(GeometryError::InvalidClipRange { near, far });
    }
    Ok(())
}

/// The side planes bound `0 <= fx x/z + cx < U` and `0 <= fy y/z + cy < V`,
/// which is exactly the set of points whose floored pixel is in the image.
pub fn make_frustum(
    k: &CameraIntrinsics,
    e: &CameraExtrinsic,
    near: f64,
    far: f64,
) -> Result<Frustum, GeometryError> {
    validate_clip_range(near, far)?;
    let (w, h) = (k.width as f64, k.height as f64);
    let planes = [
        Plane::from_camera(Vector3::new(k.fx, 0.0, k.cx), 0.0, false, e),
        Plane::from_camera(Vector3::new(-k.fx, 0.0, w - k.cx), 0.0, true, e),
        Plane::from_camera(Vector3::new(0.0, k.fy, k.cy), 0.0, false, e),
        Plane::from_camera(Vector3::new(0.0, -k.fy, h - k.cy), 0.0, true, e),
        Plane::from_camera(Vector3::new(0.0, 0.0, 1.0), -near, false, e),
        Plane::from_camera(Vector3::new(0.0, 0.0, -1.0), far, false, e),
    ];
    Ok(Frustum {
        apex: e.translation,
        planes,
        near,
        far,
    })
}

pub fn contains(f: &Frustum, p: &Vector3<f64>) -> bool {
    f.contains(p)
}

/// Heading of the optical axis in the world x-y plane, counter-clockwise
/// from world +x, in `(-pi, pi]`.
pub fn yaw_of(e: &CameraExtrinsic) -> Result<f64, GeometryError> {
    let f = e.forward();
    if f.x.hypot(f.y) < GIMBAL_TOLERANCE {
        return Err(GeometryError::GimbalDegenerate);
    }
    let yaw = f.y.atan2(f.x);
    Ok(if yaw <= -std::f64::consts::PI { std::f64::consts::PI } else { yaw })
}

/// Absolute angular difference folded into `[0, pi]`.
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let d = (a - b).abs() % two_pi;
    if d > std::f64::consts::PI {
        two_pi - d
    } else {
        d
    }
}

/// Basis change from right-down-front camera axes to front-left-up ego axes.
pub fn ego_basis() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 0.0, 1.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, -1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Rotation block of [`ego_basis`].
pub fn ego_rotation() -> Matrix3<f64> {
    ego_basis().fixed_view::<3, 3>(0, 0).into_owned()
}
