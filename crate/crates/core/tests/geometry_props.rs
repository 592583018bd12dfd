mod common;

use nalgebra::Vector3;
use proptest::prelude::*;

use common::{extrinsic, intrinsics, vec3};
use egopose_core::geometry::{
    camera_to_world, make_frustum, project_to_pixel, world_to_camera, yaw_difference, CameraExtrinsic,
};

proptest! {
    #[test]
    fn world_to_camera_is_an_isometry(e in extrinsic(), pts in prop::collection::vec(vec3(20.0), 2..12)) {
        let cam: Vec<_> = pts.iter().map(|p| world_to_camera(p, &e)).collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let before = (pts[i] - pts[j]).norm();
                let after = (cam[i] - cam[j]).norm();
                prop_assert!((before - after).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn camera_round_trip(e in extrinsic(), p in vec3(50.0)) {
        let back = camera_to_world(&world_to_camera(&p, &e), &e);
        prop_assert!((back - p).norm() <= 1e-6);
    }

    #[test]
    fn contains_iff_projects_in_view(e in extrinsic(), p in vec3(15.0)) {
        let k = intrinsics();
        let (near, far) = (0.1, 10.0);
        let f = make_frustum(&k, &e, near, far).unwrap();
        let c = world_to_camera(&p, &e);
        let expected = near <= c.z
            && c.z <= far
            && project_to_pixel(&c, &k).map(|h| k.in_bounds(h.u, h.v)).unwrap_or(false);
        prop_assert_eq!(f.contains(&p), expected);
    }

    #[test]
    fn contains_iff_projects_in_view_near_camera(e in extrinsic(), dir in vec3(1.0), depth in 0.0f64..12.0) {
        // Points sampled along view rays so that a good share land inside.
        let k = intrinsics();
        let f = make_frustum(&k, &e, 0.1, 10.0).unwrap();
        let ray = Vector3::new(dir.x * 0.7, dir.y * 0.55, 1.0);
        let p = camera_to_world(&(ray * depth), &e);
        let c = world_to_camera(&p, &e);
        let expected = 0.1 <= c.z
            && c.z <= 10.0
            && project_to_pixel(&c, &k).map(|h| k.in_bounds(h.u, h.v)).unwrap_or(false);
        prop_assert_eq!(f.contains(&p), expected);
    }

    #[test]
    fn yaw_difference_is_symmetric_and_bounded(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let d = yaw_difference(a, b);
        prop_assert_eq!(d, yaw_difference(b, a));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
    }
}

#[test]
fn apex_sits_outside_by_the_near_cutoff() {
    let k = intrinsics();
    let e = CameraExtrinsic::identity(0);
    let f = make_frustum(&k, &e, 0.1, 10.0).unwrap();
    assert!(!f.contains(f.apex()));
    let near = f.planes()[4];
    assert!((near.signed_distance(f.apex()) + 0.1).abs() < 1e-12);
    for pl in f.planes() {
        assert!((pl.normal.norm() - 1.0).abs() < 1e-9);
    }
}
