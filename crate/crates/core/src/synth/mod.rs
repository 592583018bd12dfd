//! Deterministic synthetic rooms with known object geometry, and the slow
//! reference implementations in [`oracle`] that the production paths are
//! checked against.

pub mod oracle;

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraExtrinsic, CameraIntrinsics};
use crate::scene::{ObjectAnnotation, OrientedBox, PointCloud, SceneBundle, Trajectory};

/// Thickness given to flat shapes when they are annotated as boxes.
const FLAT_BOX_THICKNESS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthShape {
    /// Vertical rectangle whose normal points along `yaw`.
    WallPatch { center: [f64; 3], width: f64, height: f64, yaw: f64 },
    /// Surface of a box rotated by `yaw` about world z.
    BoxShell { center: [f64; 3], sizes: [f64; 3], yaw: f64 },
    /// Horizontal disc.
    Disc { center: [f64; 3], radius: f64 },
}

impl SynthShape {
    pub fn center(&self) -> Vector3<f64> {
        match *self {
            SynthShape::WallPatch { center, .. } | SynthShape::BoxShell { center, .. } | SynthShape::Disc { center, .. } => {
                Vector3::from(center)
            }
        }
    }

    /// Tight oriented box around the shape.
    pub fn bounding_box(&self) -> OrientedBox {
        match *self {
            SynthShape::WallPatch { center, width, height, yaw } => OrientedBox {
                center: Vector3::from(center),
                sizes: [FLAT_BOX_THICKNESS, width, height],
                rotation: yaw_rotation(yaw),
            },
            SynthShape::BoxShell { center, sizes, yaw } => OrientedBox {
                center: Vector3::from(center),
                sizes,
                rotation: yaw_rotation(yaw),
            },
            SynthShape::Disc { center, radius } => OrientedBox::axis_aligned(
                Vector3::from(center),
                [2.0 * radius, 2.0 * radius, FLAT_BOX_THICKNESS],
            ),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        match *self {
            SynthShape::WallPatch { center, width, height, yaw } => {
                let local = Vector3::new(0.0, rng.random_range(-0.5..0.5) * width, rng.random_range(-0.5..0.5) * height);
                yaw_rotation(yaw) * local + Vector3::from(center)
            }
            SynthShape::BoxShell { center, sizes, yaw } => {
                let [a, b, c] = sizes;
                let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 5;
                for (i, area) in areas.iter().enumerate() {
                    if pick < *area {
                        face = i;
                        break;
                    }
                    pick -= area;
                }
                let mut local = Vector3::new(
                    rng.random_range(-0.5..0.5) * a,
                    rng.random_range(-0.5..0.5) * b,
                    rng.random_range(-0.5..0.5) * c,
                );
                let axis = face / 2;
                let sign = if face % 2 == 0 { -0.5 } else { 0.5 };
                local[axis] = sign * sizes[axis];
                yaw_rotation(yaw) * local + Vector3::from(center)
            }
            SynthShape::Disc { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..TAU);
                Vector3::from(center) + Vector3::new(r * theta.cos(), r * theta.sin(), 0.0)
            }
        }
    }
}

pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationKind {
    Segmentation,
    Box,
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthObject {
    pub shape: SynthShape,
    pub points: usize,
    pub annotation: AnnotationKind,
}

/// Cameras evenly spaced on a horizontal circle around `look_at`, each
/// aimed at it with a uniform yaw perturbation of up to `yaw_jitter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub look_at: [f64; 3],
    pub yaw_jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Room spans `[0, x] x [0, y]` with walls of height `z`.
    pub room: [f64; 3],
    /// Points per square meter on the floor and four walls.
    pub wall_density: f64,
    pub objects: Vec<SynthObject>,
    pub cameras: CameraRing,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

/// Object plus the cloud indices generated for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub object_id: u32,
    pub shape: SynthShape,
    pub indices: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub bundle: SceneBundle,
    pub objects: Vec<ObjectTruth>,
}

/// Size targets for [`SynthSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthBudget {
    pub points: usize,
    pub frames: usize,
    pub objects: usize,
    /// Annotation kinds are cycled through this pattern.
    pub kinds: &'static [AnnotationKind],
}

impl SynthBudget {
    pub const SEGMENTATION_ONLY: &'static [AnnotationKind] = &[AnnotationKind::Segmentation];
    pub const MIXED: &'static [AnnotationKind] = &[AnnotationKind::Segmentation, AnnotationKind::Box, AnnotationKind::Point];
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).expect("valid")
}

impl SynthSpec {
    /// Room of random size with randomly placed furniture-sized objects.
    /// About a fifth of the point budget goes to objects.
    pub fn random(seed: u64, budget: SynthBudget) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_0000_5A5A);
        let room = [rng.random_range(4.0..8.0), rng.random_range(4.0..8.0), 2.6];
        let object_points = if budget.objects == 0 { 0 } else { (budget.points / 5 / budget.objects).max(1) };
        let wall_points = budget.points.saturating_sub(object_points * budget.objects).max(1);
        let area = room[0] * room[1] + 2.0 * (room[0] + room[1]) * room[2];
        let objects = (0..budget.objects)
            .map(|i| {
                let center_xy = [rng.random_range(1.0..room[0] - 1.0), rng.random_range(1.0..room[1] - 1.0)];
                let yaw = rng.random_range(-PI..PI);
                let shape = match rng.random_range(0..3) {
                    0 => {
                        let height = rng.random_range(0.5..1.2);
                        SynthShape::WallPatch {
                            center: [center_xy[0], center_xy[1], height / 2.0 + 0.1],
                            width: rng.random_range(0.5..1.5),
                            height,
                            yaw,
                        }
                    }
                    1 => {
                        let sizes = [rng.random_range(0.4..1.2), rng.random_range(0.4..1.2), rng.random_range(0.4..1.0)];
                        SynthShape::BoxShell {
                            center: [center_xy[0], center_xy[1], sizes[2] / 2.0],
                            sizes,
                            yaw,
                        }
                    }
                    _ => SynthShape::Disc {
                        center: [center_xy[0], center_xy[1], rng.random_range(0.4..1.0)],
                        radius: rng.random_range(0.2..0.6),
                    },
                };
                SynthObject {
                    shape,
                    points: object_points,
                    annotation: budget.kinds[i % budget.kinds.len()],
                }
            })
            .collect();
        let cameras = CameraRing {
            count: budget.frames,
            radius: room[0].min(room[1]) / 2.0 - 0.4,
            height: 1.5,
            look_at: [room[0] / 2.0, room[1] / 2.0, 0.7],
            yaw_jitter: 0.8,
        };
        Self {
            room,
            wall_density: wall_points as f64 / area,
            objects,
            cameras,
            intrinsics: default_intrinsics(),
            seed,
        }
    }
}

fn sample_room(spec: &SynthSpec, rng: &mut ChaCha8Rng, out: &mut Vec<[f32; 3]>) {
    let [x, y, z] = spec.room;
    // floor, then walls at y=0, y=Y, x=0, x=X
    let patches: [(f64, Box<dyn Fn(f64, f64) -> [f64; 3]>); 5] = [
        (x * y, Box::new(move |a, b| [a * x, b * y, 0.0])),
        (x * z, Box::new(move |a, b| [a * x, 0.0, b * z])),
        (x * z, Box::new(move |a, b| [a * x, y, b * z])),
        (y * z, Box::new(move |a, b| [0.0, a * y, b * z])),
        (y * z, Box::new(move |a, b| [x, a * y, b * z])),
    ];
    for (area, place) in &patches {
        let n = (area * spec.wall_density).round() as usize;
        for _ in 0..n {
            let p = place(rng.random(), rng.random());
            out.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        }
    }
}

fn ring_cameras(ring: &CameraRing, rng: &mut ChaCha8Rng) -> Vec<CameraExtrinsic> {
    let target = Vector3::from(ring.look_at);
    (0..ring.count)
        .map(|i| {
            let angle = TAU * i as f64 / ring.count as f64;
            let eye = Vector3::new(
                target.x + ring.radius * angle.cos(),
                target.y + ring.radius * angle.sin(),
                ring.height,
            );
            let jitter = if ring.yaw_jitter > 0.0 {
                rng.random_range(-ring.yaw_jitter..ring.yaw_jitter)
            } else {
                0.0
            };
            let aim = yaw_rotation(jitter) * (target - eye);
            CameraExtrinsic::look_at(eye, eye + aim, i as u32).expect("ring cameras are never vertical")
        })
        .collect()
}

/// Builds the scene described by `spec`. Object points follow the room
/// points in the cloud, in object order, so each mask is a contiguous
/// index range.
pub fn gen_scene(spec: &SynthSpec) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    sample_room(spec, &mut rng, &mut points);
    if points.is_empty() {
        points.push([0.0, 0.0, 0.0]);
    }
    let mut truths = Vec::with_capacity(spec.objects.len());
    let mut annotations = Vec::with_capacity(spec.objects.len());
    for (i, obj) in spec.objects.iter().enumerate() {
        let object_id = i as u32 + 1;
        let start = points.len() as u32;
        for _ in 0..obj.points {
            let p = obj.shape.sample(&mut rng);
            points.push([p.x as f32, p.y as f32, p.z as f32]);
        }
        let indices: Vec<u32> = (start..points.len() as u32).collect();
        let ann = match obj.annotation {
            AnnotationKind::Segmentation => ObjectAnnotation::segmentation(object_id, indices.clone()),
            AnnotationKind::Box => ObjectAnnotation::oriented_box(object_id, obj.shape.bounding_box()),
            AnnotationKind::Point => ObjectAnnotation::point(object_id, obj.shape.center()),
        };
        annotations.push(ann);
        truths.push(ObjectTruth {
            object_id,
            shape: obj.shape,
            indices,
        });
    }
    let cameras = ring_cameras(&spec.cameras, &mut rng);
    let trajectory = Trajectory::new(spec.intrinsics, cameras).expect("ring has at least one camera");
    let bundle = SceneBundle::new(format!("synth{:04}", spec.seed), PointCloud::new(points), trajectory, annotations)
        .expect("generated scene is valid");
    SynthScene { bundle, objects: truths }
}
