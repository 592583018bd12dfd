//! Object-frustum intersection scores and the camera-object matrix.
//!
//! Three annotation forms are scored per frame:
//!
//! * segmentation masks: fraction of mask points that survive a Z-buffer
//!   depth test against the whole cloud,
//! * oriented boxes: fraction of stratified jittered samples inside the
//!   frustum,
//! * point anchors: one minus the normalized pixel distance of the anchor's
//!   projection from the image center.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    make_frustum, pixel_of, validate_clip_range, CameraExtrinsic, CameraIntrinsics, Frustum,
    GeometryError, Plane, WorldToCamera, DEFAULT_FAR, DEFAULT_NEAR,
};
use crate::scene::{AnnotationShape, OrientedBox, PointCloud, SceneBundle};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntersectionError {
    #[error("segmentation mask is empty")]
    EmptyMask,
    #[error("mask index {index} out of bounds for {len} points")]
    IndexOutOfBounds { index: u32, len: usize },
    #[error("degenerate box sizes {0:?}")]
    DegenerateBox([f64; 3]),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scene has no frames")]
    EmptyTrajectory,
    #[error("scene has no annotations")]
    NoAnnotations,
    #[error("matrix shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionConfig {
    /// Depth-test margin in meters.
    pub delta: f64,
    /// Box sampling grid step in meters.
    pub grid_step: f64,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
    /// Integer divisor applied to the image size for the Z-buffer.
    pub zbuffer_scale: u32,
    /// Per-sample uniform offsets inside each grid cell for box sampling.
    pub jitter: bool,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            grid_step: 0.05,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            seed: 0,
            zbuffer_scale: 1,
            jitter: true,
        }
    }
}

impl IntersectionConfig {
    pub fn validate(&self) -> Result<(), IntersectionError> {
        if !(self.delta > 0.0) {
            return Err(IntersectionError::InvalidConfig(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(IntersectionError::InvalidConfig(format!(
                "grid step must be > 0, got {}",
                self.grid_step
            )));
        }
        if self.zbuffer_scale == 0 {
            return Err(IntersectionError::InvalidConfig("zbuffer scale must be >= 1".into()));
        }
        validate_clip_range(self.near, self.far)?;
        Ok(())
    }
}

/// Per-pixel minimum camera depth; empty cells hold `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBuffer {
    intrinsics: CameraIntrinsics,
    depths: Vec<f64>,
}

impl ZBuffer {
    pub fn empty(intrinsics: CameraIntrinsics) -> Self {
        Self {
            depths: vec![f64::INFINITY; intrinsics.pixel_count() + 1],
            intrinsics,
        }
    }

    /// Intrinsics the buffer was rasterized with (after any downscale).
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Row-major depths, index `v * width + u`.
    pub fn depths(&self) -> &[f64] {
        &self.depths[..self.intrinsics.pixel_count()]
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.depths[v as usize * self.intrinsics.width as usize + u as usize]
    }

    fn reset(&mut self, intrinsics: CameraIntrinsics) {
        self.intrinsics = intrinsics;
        self.depths.clear();
        // One spare cell at the end absorbs rejected points in the
        // branch-free loop; it is reset before returning.
        self.depths.resize(intrinsics.pixel_count() + 1, f64::INFINITY);
    }

    /// Rasterizes `cloud` into this buffer, reusing its allocation.
    pub fn rasterize(&mut self, cloud: &PointCloud, k: CameraIntrinsics, e: &CameraExtrinsic, near: f64) {
        self.reset(k);
        let map = e.world_to_camera_map();
        let view = ViewTest::new(&k, near);
        for p in &cloud.points {
            self.splat(&map, &view, [p[0] as f64, p[1] as f64, p[2] as f64]);
        }
    }

    /// Same result as [`ZBuffer::rasterize`], skipping chunks that lie
    /// entirely outside the view.
    pub fn rasterize_chunked(&mut self, cloud: &ChunkedCloud, k: CameraIntrinsics, e: &CameraExtrinsic, near: f64) {
        self.reset(k);
        let map = e.world_to_camera_map();
        let view = ViewTest::new(&k, near);
        // The far distance is irrelevant here; only the side and near planes are used.
        let planes = make_frustum(&k, e, near, near + 1.0).ok().map(|f| *f.planes());
        let mut block = Block::default();
        let spare = k.pixel_count();
        for chunk in &cloud.chunks {
            if let Some(planes) = &planes {
                if chunk.outside(&planes[..5]) {
                    continue;
                }
            }
            let mut start = chunk.start;
            while start < chunk.end {
                let end = (start + BLOCK).min(chunk.end);
                let n = end - start;
                view.project_block(
                    &map,
                    [&cloud.xs[start..end], &cloud.ys[start..end], &cloud.zs[start..end]],
                    spare as u64,
                    &mut block,
                );
                for i in 0..n {
                    let slot = &mut self.depths[block.cell[i] as usize];
                    let z = block.z[i];
                    *slot = if z < *slot { z } else { *slot };
                }
                start = end;
            }
        }
        self.depths[spare] = f64::INFINITY;
    }

    #[inline(always)]
    fn splat(&mut self, map: &WorldToCamera, view: &ViewTest, p: [f64; 3]) {
        if let Some((cell, depth)) = view.cell(map, p) {
            let slot = &mut self.depths[cell];
            if depth < *slot {
                *slot = depth;
            }
        }
    }
}

/// Depth and image-bounds test shared by rasterization and visibility
/// counting. `0 <= floor(a) < W` is checked as `0 <= a < W`, which is the
/// same condition for finite `a` and avoids the floor on rejected points.
struct ViewTest {
    k: CameraIntrinsics,
    w: f64,
    h: f64,
    near: f64,
}

impl ViewTest {
    fn new(k: &CameraIntrinsics, near: f64) -> Self {
        Self {
            k: *k,
            w: k.width as f64,
            h: k.height as f64,
            near,
        }
    }

    /// Buffer index and depth of `p`, if it lands in the image in front of
    /// the near plane. Matches `pixel_of` + `in_bounds` bit for bit.
    #[inline(always)]
    fn cell(&self, map: &WorldToCamera, p: [f64; 3]) -> Option<(usize, f64)> {
        let z = map.depth(p);
        if !(z > self.near) {
            return None;
        }
        let c = map.apply(p);
        let a = self.k.fx * c[0] / z + self.k.cx;
        if !(a >= 0.0 && a < self.w) {
            return None;
        }
        let b = self.k.fy * c[1] / z + self.k.cy;
        if !(b >= 0.0 && b < self.h) {
            return None;
        }
        Some((b as usize * self.k.width as usize + a as usize, z))
    }

    /// Branch-free projection of up to [`BLOCK`] points, so the divisions
    /// vectorize. Rejected points get the `spare` cell.
    #[inline(always)]
    fn project_block(&self, map: &WorldToCamera, p: [&[f64]; 3], spare: u64, out: &mut Block) {
        let n = p[0].len();
        let (xs, ys, zs) = (&p[0][..n], &p[1][..n], &p[2][..n]);
        let z = &mut out.z[..n];
        let cell = &mut out.cell[..n];
        let width = self.w;
        for i in 0..n {
            let c = map.apply([xs[i], ys[i], zs[i]]);
            let u = self.k.fx * c[0] / c[2] + self.k.cx;
            let v = self.k.fy * c[1] / c[2] + self.k.cy;
            let ok = (c[2] > self.near) & (u >= 0.0) & (u < self.w) & (v >= 0.0) & (v < self.h);
            let idx = small_floor(v) * width + small_floor(u);
            z[i] = c[2];
            cell[i] = if ok { small_to_bits(idx) } else { spare };
        }
    }
}

const BLOCK: usize = 256;

const TWO_52: f64 = 4_503_599_627_370_496.0;

/// `floor(x)` for `0 <= x < 2^51` without a float-to-int conversion, so the
/// projection loop vectorizes. Other inputs give garbage.
#[inline(always)]
fn small_floor(x: f64) -> f64 {
    let r = (x + TWO_52) - TWO_52;
    if r > x {
        r - 1.0
    } else {
        r
    }
}

/// Integer value of a whole `x` in `[0, 2^52)`.
#[inline(always)]
fn small_to_bits(x: f64) -> u64 {
    (x + TWO_52).to_bits() & ((1 << 52) - 1)
}

struct Block {
    cell: [u64; BLOCK],
    z: [f64; BLOCK],
}

impl Default for Block {
    fn default() -> Self {
        Self {
            cell: [0; BLOCK],
            z: [0.0; BLOCK],
        }
    }
}

/// Spatial chunk edge length in meters.
pub const CHUNK_SIZE: f64 = 0.5;

/// A chunk is skipped only when it is this far outside one plane, so that
/// rounding in the plane test can never drop a visible point.
const CULL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Chunk {
    start: usize,
    end: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    /// False for the chunk holding non-finite points.
    cullable: bool,
}

impl Chunk {
    fn outside(&self, planes: &[Plane]) -> bool {
        if !self.cullable {
            return false;
        }
        planes.iter().any(|pl| {
            // Corner of the box farthest along the plane normal.
            let n = pl.normal;
            let q = Vector3::new(
                if n.x >= 0.0 { self.hi[0] } else { self.lo[0] },
                if n.y >= 0.0 { self.hi[1] } else { self.lo[1] },
                if n.z >= 0.0 { self.hi[2] } else { self.lo[2] },
            );
            pl.signed_distance(&q) < -CULL_MARGIN
        })
    }
}

/// Point cloud regrouped into cubic chunks of [`CHUNK_SIZE`], with
/// coordinates widened to f64. Built once per scene and shared by all
/// frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedCloud {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    chunks: Vec<Chunk>,
}

impl ChunkedCloud {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::with_chunk_size(cloud, CHUNK_SIZE)
    }

    pub fn with_chunk_size(cloud: &PointCloud, size: f64) -> Self {
        let key = |p: &[f32; 3]| -> Option<[i64; 3]> {
            p.iter()
                .all(|c| c.is_finite())
                .then(|| p.map(|c| (c as f64 / size).floor() as i64))
        };
        let mut order: Vec<(Option<[i64; 3]>, u32)> =
            cloud.points.iter().enumerate().map(|(i, p)| (key(p), i as u32)).collect();
        order.sort_unstable();
        let n = order.len();
        let (mut xs, mut ys, mut zs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut chunks = Vec::new();
        let mut start = 0;
        while start < n {
            let k = order[start].0;
            let mut end = start;
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            while end < n && order[end].0 == k {
                let p = cloud.point_f64(order[end].1 as usize);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
                xs.push(p[0]);
                ys.push(p[1]);
                zs.push(p[2]);
                end += 1;
            }
            chunks.push(Chunk {
                start,
                end,
                lo,
                hi,
                cullable: k.is_some(),
            });
            start = end;
        }
        Self { xs, ys, zs, chunks }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }
}

pub fn build_zbuffer(
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    e: &CameraExtrinsic,
    cfg: &IntersectionConfig,
) -> Result<ZBuffer, IntersectionError> {
    let k = k.downscaled(cfg.zbuffer_scale)?;
    let mut z = ZBuffer::empty(k);
    z.rasterize(cloud, k, e, cfg.near);
    Ok(z)
}

/// Fraction of mask points whose depth is within `delta` of the buffer.
/// Points that fall outside the image stay in the denominator.
pub fn phi_seg(
    cloud: &PointCloud,
    indices: &[u32],
    z: &ZBuffer,
    e: &CameraExtrinsic,
    cfg: &IntersectionConfig,
) -> Result<f64, IntersectionError> {
    if indices.is_empty() {
        return Err(IntersectionError::EmptyMask);
    }
    let map = e.world_to_camera_map();
    let visible = count_visible(cloud, indices, z, &map, cfg)?;
    Ok(visible as f64 / indices.len() as f64)
}

fn count_visible(
    cloud: &PointCloud,
    indices: &[u32],
    z: &ZBuffer,
    map: &WorldToCamera,
    cfg: &IntersectionConfig,
) -> Result<usize, IntersectionError> {
    let view = ViewTest::new(&z.intrinsics, cfg.near);
    let mut visible = 0usize;
    for &i in indices {
        let p = cloud.points.get(i as usize).ok_or(IntersectionError::IndexOutOfBounds {
            index: i,
            len: cloud.len(),
        })?;
        if let Some((cell, depth)) = view.cell(map, [p[0] as f64, p[1] as f64, p[2] as f64]) {
            if depth < z.depths[cell] + cfg.delta {
                visible += 1;
            }
        }
    }
    Ok(visible)
}

/// Cells per axis and the matching cell size, so that the grid tiles the
/// box exactly.
pub fn box_grid(sizes: [f64; 3], step: f64) -> [(usize, f64); 3] {
    sizes.map(|s| {
        let n = ((s / step).round() as usize).max(1);
        (n, s / n as f64)
    })
}

/// Frustum planes expressed in the box's local frame.
fn local_planes(b: &OrientedBox, f: &Frustum) -> [([f64; 3], f64, bool); 6] {
    f.planes().map(|pl| {
        let n = b.rotation.transpose() * pl.normal;
        ([n.x, n.y, n.z], pl.offset + pl.normal.dot(&b.center), pl.open)
    })
}

#[inline]
fn inside_local(planes: &[([f64; 3], f64, bool); 6], q: [f64; 3]) -> bool {
    planes.iter().all(|(n, off, open)| {
        let d = n[0] * q[0] + n[1] * q[1] + n[2] * q[2] + off;
        if *open {
            d > 0.0
        } else {
            d >= 0.0
        }
    })
}

/// Monte-Carlo estimate of the fraction of `b` inside `f`.
///
/// Samples lie on a grid with about `cfg.grid_step` spacing in the box's
/// local frame; with jitter enabled each sample gets a uniform offset inside
/// its cell (three draws per sample, row-major x, y, z order).
pub fn phi_box<R: Rng + ?Sized>(
    b: &OrientedBox,
    f: &Frustum,
    cfg: &IntersectionConfig,
    rng: &mut R,
) -> Result<f64, IntersectionError> {
    if b.sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(IntersectionError::DegenerateBox(b.sizes));
    }
    let planes = local_planes(b, f);
    let half = b.sizes.map(|s| s / 2.0);

    // Convexity: all corners inside means every sample is inside, all
    // corners outside one plane means none is.
    let corners = (0..8).map(|m| {
        [
            if m & 1 == 0 { -half[0] } else { half[0] },
            if m & 2 == 0 { -half[1] } else { half[1] },
            if m & 4 == 0 { -half[2] } else { half[2] },
        ]
    });
    let corners: Vec<[f64; 3]> = corners.collect();
    if corners.iter().all(|&c| inside_local(&planes, c)) {
        return Ok(1.0);
    }
    let separated = planes.iter().any(|(n, off, _)| {
        corners
            .iter()
            .all(|c| n[0] * c[0] + n[1] * c[1] + n[2] * c[2] + off < 0.0)
    });
    if separated {
        return Ok(0.0);
    }

    let [(nx, sx), (ny, sy), (nz, sz)] = box_grid(b.sizes, cfg.grid_step);
    let mut inside = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let (ex, ey, ez) = if cfg.jitter {
                    (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>())
                } else {
                    (0.0, 0.0, 0.0)
                };
                let q = [
                    -half[0] + (i as f64 + ex) * sx,
                    -half[1] + (j as f64 + ey) * sy,
                    -half[2] + (k as f64 + ez) * sz,
                ];
                if inside_local(&planes, q) {
                    inside += 1;
                }
            }
        }
    }
    Ok(inside as f64 / (nx * ny * nz) as f64)
}

/// Image-center proximity of a projected anchor; zero when the anchor is
/// behind the near plane or outside the image.
pub fn phi_point(p: &Vector3<f64>, k: &CameraIntrinsics, e: &CameraExtrinsic, cfg: &IntersectionConfig) -> f64 {
    let c = e.world_to_camera_map().apply([p.x, p.y, p.z]);
    if !(c[2] > cfg.near) {
        return 0.0;
    }
    let (u, v) = pixel_of(c, k);
    if !k.in_bounds(u, v) {
        return 0.0;
    }
    let (hw, hh) = (k.width as f64 / 2.0, k.height as f64 / 2.0);
    let score = 1.0 - (hw - u as f64).hypot(hh - v as f64) / hw.hypot(hh);
    score.clamp(0.0, 1.0)
}

/// Dense frames x objects grid of intersection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionMatrix {
    scene_id: String,
    frame_ids: Vec<u32>,
    object_ids: Vec<u32>,
    scores: Vec<f32>,
}

impl IntersectionMatrix {
    pub fn new(
        scene_id: impl Into<String>,
        frame_ids: Vec<u32>,
        object_ids: Vec<u32>,
        scores: Vec<f32>,
    ) -> Result<Self, IntersectionError> {
        if scores.len() != frame_ids.len() * object_ids.len() {
            return Err(IntersectionError::ShapeMismatch(format!(
                "{} scores for {}x{} matrix",
                scores.len(),
                frame_ids.len(),
                object_ids.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(IntersectionError::ShapeMismatch(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            frame_ids,
            object_ids,
            scores,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn frame_ids(&self) -> &[u32] {
        &self.frame_ids
    }

    pub fn object_ids(&self) -> &[u32] {
        &self.object_ids
    }

    /// Row-major scores.
    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn n_frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn n_objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.scores[row * self.object_ids.len() + col]
    }

    pub fn object_column(&self, object_id: u32) -> Option<usize> {
        self.object_ids.iter().position(|&o| o == object_id)
    }

    /// `(frame_id, score)` pairs for one object, in frame order.
    pub fn column(&self, object_id: u32) -> Option<Vec<(u32, f32)>> {
        let col = self.object_column(object_id)?;
        Some(
            self.frame_ids
                .iter()
                .enumerate()
                .map(|(row, &f)| (f, self.get(row, col)))
                .collect(),
        )
    }
}

/// Outcome of a full-matrix build.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBuild {
    pub matrix: IntersectionMatrix,
    /// Cells that failed and were recorded as zero.
    pub warnings: usize,
}

/// Scores every (frame, object) pair of a scene. One Z-buffer per frame is
/// shared by all of that frame's segmentation objects; frames are processed
/// in parallel on the current rayon pool.
pub fn build_intersection_matrix(
    scene: &SceneBundle,
    cfg: &IntersectionConfig,
) -> Result<MatrixBuild, IntersectionError> {
    cfg.validate()?;
    let traj = &scene.trajectory;
    if traj.frames.is_empty() {
        return Err(IntersectionError::EmptyTrajectory);
    }
    if scene.annotations.is_empty() {
        return Err(IntersectionError::NoAnnotations);
    }
    let k_full = traj.intrinsics;
    let k_z = k_full.downscaled(cfg.zbuffer_scale)?;
    let needs_zbuffer = scene
        .annotations
        .iter()
        .any(|a| matches!(a.shape, AnnotationShape::Segmentation(_)));
    let warnings = AtomicUsize::new(0);
    let chunked = needs_zbuffer.then(|| ChunkedCloud::new(&scene.cloud));

    let rows: Vec<Vec<f32>> = traj
        .frames
        .par_iter()
        .map_init(
            || ZBuffer::empty(k_z),
            |zbuf, e| {
                if let Some(chunked) = &chunked {
                    zbuf.rasterize_chunked(chunked, k_z, e, cfg.near);
                }
                let frustum = make_frustum(&k_full, e, cfg.near, cfg.far);
                let map = e.world_to_camera_map();
                scene
                    .annotations
                    .iter()
                    .map(|ann| {
                        let score = match &ann.shape {
                            AnnotationShape::Segmentation(indices) => {
                                if indices.is_empty() {
                                    Err(IntersectionError::EmptyMask)
                                } else {
                                    count_visible(&scene.cloud, indices, zbuf, &map, cfg)
                                        .map(|n| n as f64 / indices.len() as f64)
                                }
                            }
                            AnnotationShape::OrientedBox(b) => match &frustum {
                                Ok(f) => {
                                    let mut rng =
                                        seed::rng_from(&[cfg.seed, e.frame_id() as u64, ann.object_id as u64]);
                                    phi_box(b, f, cfg, &mut rng)
                                }
                                Err(err) => Err(err.clone().into()),
                            },
                            AnnotationShape::PointAnchor(p) => Ok(phi_point(p, &k_full, e, cfg)),
                        };
                        match score {
                            Ok(s) => s as f32,
                            Err(err) => {
                                log::warn!(
                                    "scene {} frame {} object {}: {err}; scoring 0",
                                    scene.scene_id,
                                    e.frame_id(),
                                    ann.object_id
                                );
                                warnings.fetch_add(1, Ordering::Relaxed);
                                0.0
                            }
                        }
                    })
                    .collect()
            },
        )
        .collect();

    let matrix = IntersectionMatrix::new(
        scene.scene_id.clone(),
        traj.frame_ids(),
        scene.object_ids(),
        rows.concat(),
    )?;
    Ok(MatrixBuild {
        matrix,
        warnings: warnings.into_inner(),
    })
}
