mod common;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{extrinsic, intrinsics, rotation};
use egopose_core::geometry::{camera_to_world, make_frustum, CameraExtrinsic};
use egopose_core::intersection::{build_intersection_matrix, build_zbuffer, phi_box, phi_seg, ChunkedCloud, ZBuffer};
use egopose_core::synth::oracle::{oracle_zbuffer, oracle_zbuffer_dense};
use egopose_core::synth::{gen_scene, SynthBudget, SynthSpec};
use egopose_core::{IntersectionConfig, OrientedBox, PointCloud};

/// Cloud around the identity camera's optical axis with a few stray points.
fn cloud_in_view() -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec(
        prop_oneof![
            4 => [-3.0f32..3.0, -2.0f32..2.0, 0.5f32..8.0],
            1 => [-20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0],
        ],
        1..400,
    )
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_fractions(seed in 0u64..10_000) {
        let spec = SynthSpec::random(seed, SynthBudget { points: 2000, frames: 8, objects: 4, kinds: SynthBudget::MIXED });
        let scene = gen_scene(&spec).bundle;
        let built = build_intersection_matrix(&scene, &IntersectionConfig::default()).unwrap();
        prop_assert_eq!(built.warnings, 0);
        prop_assert!(built.matrix.scores().iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn zbuffer_matches_the_naive_loop_bitwise(points in cloud_in_view(), e in extrinsic()) {
        let k = intrinsics();
        let cloud = PointCloud::new(points);
        let oracle = oracle_zbuffer_dense(&oracle_zbuffer(&cloud, &k, &e, 0.1), &k);
        let z = build_zbuffer(&cloud, &k, &e, &IntersectionConfig::default()).unwrap();
        prop_assert!(same_bits(z.depths(), &oracle));
        let mut chunked = ZBuffer::empty(k);
        chunked.rasterize_chunked(&ChunkedCloud::with_chunk_size(&cloud, 0.3), k, &e, 0.1);
        prop_assert!(same_bits(chunked.depths(), &oracle));
    }

    #[test]
    fn identity_camera_zbuffer_matches_bitwise(points in cloud_in_view()) {
        let k = intrinsics();
        let e = CameraExtrinsic::identity(0);
        let cloud = PointCloud::new(points);
        let oracle = oracle_zbuffer_dense(&oracle_zbuffer(&cloud, &k, &e, 0.1), &k);
        let mut z = ZBuffer::empty(k);
        z.rasterize_chunked(&ChunkedCloud::new(&cloud), k, &e, 0.1);
        prop_assert!(same_bits(z.depths(), &oracle));
    }

    #[test]
    fn removing_occluders_never_lowers_phi_seg(
        object in prop::collection::vec([-1.0f32..1.0, -1.0f32..1.0, 4.0f32..5.0], 1..60),
        others in prop::collection::vec([-2.0f32..2.0, -2.0f32..2.0, 0.5f32..8.0], 0..200),
        keep in prop::collection::vec(any::<bool>(), 200),
    ) {
        let k = intrinsics();
        let e = CameraExtrinsic::identity(0);
        let cfg = IntersectionConfig::default();
        let indices: Vec<u32> = (0..object.len() as u32).collect();
        let mut all = object.clone();
        all.extend(&others);
        let full = PointCloud::new(all);
        let mut kept = object.clone();
        kept.extend(others.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p));
        let fewer = PointCloud::new(kept);
        let before = phi_seg(&full, &indices, &build_zbuffer(&full, &k, &e, &cfg).unwrap(), &e, &cfg).unwrap();
        let after = phi_seg(&fewer, &indices, &build_zbuffer(&fewer, &k, &e, &cfg).unwrap(), &e, &cfg).unwrap();
        prop_assert!(after >= before);
        prop_assert!((0.0..=1.0).contains(&before));
    }

    #[test]
    fn phi_seg_ignores_index_order(
        points in cloud_in_view(),
        e in extrinsic(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..50),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let k = intrinsics();
        let cfg = IntersectionConfig::default();
        let cloud = PointCloud::new(points);
        let mut indices: Vec<u32> = picks.iter().map(|i| i.index(cloud.len()) as u32).collect();
        indices.sort_unstable();
        indices.dedup();
        let z = build_zbuffer(&cloud, &k, &e, &cfg).unwrap();
        let a = phi_seg(&cloud, &indices, &z, &e, &cfg).unwrap();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let b = phi_seg(&cloud, &indices, &z, &e, &cfg).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn shrinking_a_box_inside_the_view_keeps_full_score(
        depth in 2.0f64..8.0,
        sizes in [0.1f64..0.8, 0.1f64..0.8, 0.1f64..0.8],
        r in rotation(),
        factor in 0.01f64..1.0,
        e in extrinsic(),
    ) {
        let k = intrinsics();
        let cfg = IntersectionConfig::default();
        let f = make_frustum(&k, &e, cfg.near, cfg.far).unwrap();
        let b = OrientedBox { center: camera_to_world(&Vector3::new(0.0, 0.0, depth), &e), sizes, rotation: r };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        prop_assert_eq!(phi_box(&b, &f, &cfg, &mut rng).unwrap(), 1.0);
        let small = OrientedBox { sizes: sizes.map(|s| s * factor), ..b };
        prop_assert_eq!(phi_box(&small, &f, &cfg, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn box_score_converges_when_the_grid_halves(
        c in [-900.0f64..1500.0, -700.0f64..1200.0, 0.5f64..11.0],
        sizes in [0.3f64..1.5, 0.3f64..1.5, 0.3f64..1.5],
        r in rotation(),
    ) {
        let k = intrinsics();
        let e = CameraExtrinsic::identity(0);
        let cfg = IntersectionConfig { jitter: false, ..IntersectionConfig::default() };
        let f = make_frustum(&k, &e, cfg.near, cfg.far).unwrap();
        // Pixel-space center back-projected to the sampled depth.
        let center = Vector3::new((c[0] - k.cx) / k.fx * c[2], (c[1] - k.cy) / k.fy * c[2], c[2]);
        let b = OrientedBox { center, sizes, rotation: r };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let coarse = phi_box(&b, &f, &cfg, &mut rng).unwrap();
        let fine = phi_box(&b, &f, &IntersectionConfig { grid_step: cfg.grid_step / 2.0, ..cfg }, &mut rng).unwrap();
        prop_assert!((coarse - fine).abs() <= 0.05, "{coarse} vs {fine}");
        prop_assert!((0.0..=1.0).contains(&coarse));
    }
}
