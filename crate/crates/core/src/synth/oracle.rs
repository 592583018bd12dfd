//! Slow, straightforward re-derivations of the scoring functions. They share
//! no code with the production paths beyond the plain data types, and are
//! only meant for tests and benchmarks.

use std::collections::HashMap;

use nalgebra::{Matrix4, Vector3, Vector4};

use crate::geometry::{CameraExtrinsic, CameraIntrinsics};
use crate::scene::{AnnotationShape, OrientedBox, PointCloud, SceneBundle};

/// Pixel and depth of a point in front of the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleHit {
    pub u: i64,
    pub v: i64,
    pub depth: f64,
}

/// Camera coordinates of `p`, accumulated term by term.
pub fn oracle_camera_coords(p: [f64; 3], e: &CameraExtrinsic) -> [f64; 3] {
    let r = e.rotation();
    let t = e.translation();
    let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
    let mut c = [0.0f64; 3];
    for (i, ci) in c.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, dk) in d.iter().enumerate() {
            acc += r[(k, i)] * dk;
        }
        *ci = acc;
    }
    c
}

/// Projection of `p`, or `None` when it is not strictly in front of the
/// camera. No bounds check.
pub fn oracle_projection(p: [f64; 3], k: &CameraIntrinsics, e: &CameraExtrinsic) -> Option<OracleHit> {
    let c = oracle_camera_coords(p, e);
    if c[2] <= 0.0 {
        return None;
    }
    let u = (k.fx * c[0] / c[2] + k.cx).floor() as i64;
    let v = (k.fy * c[1] / c[2] + k.cy).floor() as i64;
    Some(OracleHit { u, v, depth: c[2] })
}

fn in_image(h: &OracleHit, k: &CameraIntrinsics) -> bool {
    h.u >= 0 && h.v >= 0 && h.u < k.width as i64 && h.v < k.height as i64
}

fn cloud_point(cloud: &PointCloud, i: usize) -> [f64; 3] {
    let p = cloud.points[i];
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

/// Nearest depth per occupied pixel, keyed by `(u, v)`.
pub fn oracle_zbuffer(cloud: &PointCloud, k: &CameraIntrinsics, e: &CameraExtrinsic, near: f64) -> HashMap<(i64, i64), f64> {
    let mut map: HashMap<(i64, i64), f64> = HashMap::new();
    for i in 0..cloud.len() {
        let Some(h) = oracle_projection(cloud_point(cloud, i), k, e) else { continue };
        if h.depth <= near || !in_image(&h, k) {
            continue;
        }
        map.entry((h.u, h.v))
            .and_modify(|d| {
                if h.depth < *d {
                    *d = h.depth
                }
            })
            .or_insert(h.depth);
    }
    map
}

/// Row-major dense copy of an oracle buffer, `+inf` where empty.
pub fn oracle_zbuffer_dense(map: &HashMap<(i64, i64), f64>, k: &CameraIntrinsics) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; k.width as usize * k.height as usize];
    for (&(u, v), &d) in map {
        out[v as usize * k.width as usize + u as usize] = d;
    }
    out
}

/// Visible fraction of the masked points, using a freshly built oracle
/// buffer at full resolution.
pub fn oracle_phi_seg(
    cloud: &PointCloud,
    indices: &[u32],
    k: &CameraIntrinsics,
    e: &CameraExtrinsic,
    near: f64,
    delta: f64,
) -> f64 {
    let zbuf = oracle_zbuffer(cloud, k, e, near);
    oracle_phi_seg_with(cloud, indices, &zbuf, k, e, near, delta)
}

fn oracle_phi_seg_with(
    cloud: &PointCloud,
    indices: &[u32],
    zbuf: &HashMap<(i64, i64), f64>,
    k: &CameraIntrinsics,
    e: &CameraExtrinsic,
    near: f64,
    delta: f64,
) -> f64 {
    let mut visible = 0usize;
    for &i in indices {
        let Some(h) = oracle_projection(cloud_point(cloud, i as usize), k, e) else { continue };
        if h.depth <= near || !in_image(&h, k) {
            continue;
        }
        let front = zbuf.get(&(h.u, h.v)).copied().unwrap_or(f64::INFINITY);
        if h.depth < front + delta {
            visible += 1;
        }
    }
    visible as f64 / indices.len() as f64
}

/// Camera used by the box oracle: image bounds plus depth range.
#[derive(Debug, Clone, Copy)]
pub struct OracleCamera<'a> {
    pub k: &'a CameraIntrinsics,
    pub e: &'a CameraExtrinsic,
    pub near: f64,
    pub far: f64,
}

impl OracleCamera<'_> {
    fn sees(&self, p: [f64; 3]) -> bool {
        match oracle_projection(p, self.k, self.e) {
            Some(h) => h.depth >= self.near && h.depth <= self.far && in_image(&h, self.k),
            None => false,
        }
    }
}

/// Fraction of cell centers of a regular `step` grid over the box that
/// project into the image within the depth range.
pub fn oracle_box_fraction(b: &OrientedBox, cam: OracleCamera<'_>, step: f64) -> f64 {
    let n = b.sizes.map(|s| ((s / step).ceil() as usize).max(1));
    let cell = [b.sizes[0] / n[0] as f64, b.sizes[1] / n[1] as f64, b.sizes[2] / n[2] as f64];
    let mut inside = 0u64;
    for i in 0..n[0] {
        let x = -b.sizes[0] / 2.0 + (i as f64 + 0.5) * cell[0];
        for j in 0..n[1] {
            let y = -b.sizes[1] / 2.0 + (j as f64 + 0.5) * cell[1];
            for l in 0..n[2] {
                let z = -b.sizes[2] / 2.0 + (l as f64 + 0.5) * cell[2];
                let w = b.rotation * Vector3::new(x, y, z) + b.center;
                if cam.sees([w.x, w.y, w.z]) {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (n[0] * n[1] * n[2]) as f64
}

pub fn oracle_phi_point(p: [f64; 3], k: &CameraIntrinsics, e: &CameraExtrinsic, near: f64) -> f64 {
    let Some(h) = oracle_projection(p, k, e) else { return 0.0 };
    if h.depth <= near || !in_image(&h, k) {
        return 0.0;
    }
    let w = k.width as f64;
    let hgt = k.height as f64;
    let du = w / 2.0 - h.u as f64;
    let dv = hgt / 2.0 - h.v as f64;
    let diag = ((w / 2.0).powi(2) + (hgt / 2.0).powi(2)).sqrt();
    1.0 - (du * du + dv * dv).sqrt() / diag
}

/// Full frames x objects score grid, row-major. Boxes use the fine grid at
/// `box_step`.
pub fn oracle_matrix(scene: &SceneBundle, near: f64, far: f64, delta: f64, box_step: f64) -> Vec<f64> {
    let k = &scene.trajectory.intrinsics;
    let mut out = Vec::new();
    for e in &scene.trajectory.frames {
        let zbuf = oracle_zbuffer(&scene.cloud, k, e, near);
        for ann in &scene.annotations {
            out.push(match &ann.shape {
                AnnotationShape::Segmentation(idx) => oracle_phi_seg_with(&scene.cloud, idx, &zbuf, k, e, near, delta),
                AnnotationShape::OrientedBox(b) => oracle_box_fraction(b, OracleCamera { k, e, near, far }, box_step),
                AnnotationShape::PointAnchor(p) => oracle_phi_point([p.x, p.y, p.z], k, e, near),
            });
        }
    }
    out
}

/// Largest pairwise yaw difference, by brute force.
pub fn oracle_max_yaw_spread(yaws: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in yaws.iter().enumerate() {
        for b in &yaws[i + 1..] {
            let d = (a - b).rem_euclid(std::f64::consts::TAU);
            best = best.max(d.min(std::f64::consts::TAU - d));
        }
    }
    best
}

/// Ego-frame coordinates from the full homogeneous composition
/// `U * inverse(T)`, inverting `T` numerically.
pub fn oracle_align(points: &[[f64; 3]], e: &CameraExtrinsic) -> Vec<[f64; 3]> {
    // ego front = camera z, left = -camera x, up = -camera y
    let mut u = Matrix4::zeros();
    u[(0, 2)] = 1.0;
    u[(1, 0)] = -1.0;
    u[(2, 1)] = -1.0;
    u[(3, 3)] = 1.0;
    let t_inv = e.to_matrix4().try_inverse().expect("rigid transforms are invertible");
    let m = u * t_inv;
    points
        .iter()
        .map(|p| {
            let q = m * Vector4::new(p[0], p[1], p[2], 1.0);
            [q.x / q.w, q.y / q.w, q.z / q.w]
        })
        .collect()
}
