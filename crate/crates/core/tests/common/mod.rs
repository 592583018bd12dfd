#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;

use egopose_core::geometry::{CameraExtrinsic, CameraIntrinsics};

pub fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
        .prop_filter("quaternion away from zero", |q| q.iter().map(|c| c * c).sum::<f64>() > 0.01)
        .prop_map(|[w, i, j, k]| UnitQuaternion::from_quaternion(Quaternion::new(w, i, j, k)).to_rotation_matrix().into_inner())
}

pub fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-r..r, -r..r, -r..r].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

pub fn extrinsic() -> impl Strategy<Value = CameraExtrinsic> {
    (rotation(), vec3(10.0)).prop_map(|(r, t)| CameraExtrinsic::new(r, t, 0).expect("unit quaternion rotation"))
}

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}
