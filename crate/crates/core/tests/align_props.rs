mod common;

use nalgebra::Vector3;
use proptest::prelude::*;

use common::{extrinsic, rotation, vec3};
use egopose_core::align::{align_points, align_transform, encode_pose_features, EgoTransform};
use egopose_core::geometry::{camera_to_world, yaw_difference, CameraExtrinsic};
use egopose_core::PointCloud;

proptest! {
    #[test]
    fn alignment_is_rigid(e in extrinsic(), pts in prop::collection::vec(vec3(20.0), 3..12)) {
        let q = align_points(&pts, &e);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                prop_assert!(((pts[i] - pts[j]).norm() - (q[i] - q[j]).norm()).abs() <= 1e-6);
                let (a, b) = (pts[i] - pts[0], pts[j] - pts[0]);
                let (c, d) = (q[i] - q[0], q[j] - q[0]);
                prop_assert!((a.dot(&b) - c.dot(&d)).abs() <= 1e-6 * (1.0 + a.norm() * b.norm()));
            }
        }
    }

    #[test]
    fn inverse_recovers_the_input(e in extrinsic(), pts in prop::collection::vec([-20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0], 1..50)) {
        let cloud = PointCloud::new(pts.clone());
        let aligned = align_transform(&cloud, &e, "s");
        let map = EgoTransform::new(&e);
        for (p, q) in pts.iter().zip(&aligned.cloud.points) {
            let back = map.invert(&Vector3::new(q[0] as f64, q[1] as f64, q[2] as f64));
            let p = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            // The aligned cloud is stored as f32, hence the looser bound.
            prop_assert!((back - p).norm() <= 1e-5 * (1.0 + p.norm()));
        }
        for p in &pts {
            let p = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            prop_assert!((map.invert(&map.apply(&p)) - p).norm() <= 1e-6);
        }
    }

    #[test]
    fn ego_axes_mean_front_left_up(e in extrinsic(), d in 0.5f64..10.0) {
        let map = EgoTransform::new(&e);
        let front = map.apply(&camera_to_world(&Vector3::new(0.0, 0.0, d), &e));
        prop_assert!(front.x > 0.0 && front.y.abs() < 1e-9 && front.z.abs() < 1e-9);
        // Camera x points right and camera y points down.
        let left = map.apply(&camera_to_world(&Vector3::new(-d, 0.0, 0.0), &e));
        prop_assert!(left.y > 0.0);
        let up = map.apply(&camera_to_world(&Vector3::new(0.0, -d, 0.0), &e));
        prop_assert!(up.z > 0.0);
    }

    #[test]
    fn features_are_equivariant(
        e in extrinsic(),
        g in rotation(),
        shift in vec3(5.0),
        tokens in prop::collection::vec(vec3(10.0), 1..20),
    ) {
        let moved_tokens: Vec<_> = tokens.iter().map(|p| g * p + shift).collect();
        let moved = CameraExtrinsic::new(g * e.rotation(), g * e.translation() + shift, 0).unwrap();
        let a = encode_pose_features(&tokens, &e).unwrap();
        let b = encode_pose_features(&moved_tokens, &moved).unwrap();
        for (fa, fb) in a.features.iter().zip(&b.features) {
            for i in [0, 1, 2, 3, 5] {
                prop_assert!((fa[i] - fb[i]).abs() <= 1e-6, "{fa:?} vs {fb:?}");
            }
            if fa[3] > 1e-6 {
                prop_assert!(yaw_difference(fa[4], fb[4]) <= 1e-6);
            }
        }
    }
}
