mod common;

use graspldm::dataset::{
    assign_region_label, augment, dataset_to_string, desk_suite, generate_dataset, read_dataset, write_dataset,
    AugmentConfig, Dataset, DatasetConfig, GripperSpec, PointCloud, RegionLabel,
};
use graspldm::eval::GraspOracle;
use graspldm::geom::{norm, sub};
use proptest::prelude::*;

fn desk(num_points: usize, grasps: usize) -> DatasetConfig {
    let (train, _) = desk_suite();
    DatasetConfig { num_points, grasps_per_object: grasps, objects: train, ..Default::default() }
}

#[test]
fn desk_suite_yields_full_record_count_and_every_grasp_succeeds() {
    let cfg = desk(256, 128);
    let ds = generate_dataset(&cfg, 0).unwrap();
    assert_eq!(ds.len(), 8);
    assert_eq!(ds.num_grasps(), 1024);
    let oracle = GraspOracle::new(&cfg.gripper).unwrap();
    for entry in &ds.objects {
        assert_eq!(entry.cloud.len(), 256);
        assert!(entry.cloud.is_centered());
        for g in &entry.grasps {
            assert!(g.success);
            assert_eq!(g.object_id, entry.id);
            let r = oracle.evaluate(&entry.object, &g.pose);
            assert!(r.success, "{}: {:?}", entry.id, r.failure_reason);
            assert_eq!(g.label, assign_region_label(&g.pose, &entry.cloud, &cfg.gripper));
        }
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = desk(128, 16);
    let a = dataset_to_string(&generate_dataset(&cfg, 42).unwrap()).unwrap();
    let b = dataset_to_string(&generate_dataset(&cfg, 42).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = dataset_to_string(&generate_dataset(&cfg, 43).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn file_round_trip_preserves_everything() {
    let cfg = desk(128, 16);
    let ds = generate_dataset(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.jsonl");
    write_dataset(&path, &ds).unwrap();
    let back: Dataset = read_dataset(&path).unwrap();
    assert_eq!(dataset_to_string(&back).unwrap(), dataset_to_string(&ds).unwrap());
    for (x, y) in ds.objects.iter().zip(&back.objects) {
        let lx: Vec<RegionLabel> = x.grasps.iter().map(|g| g.label).collect();
        let ly: Vec<RegionLabel> = y.grasps.iter().map(|g| g.label).collect();
        assert_eq!(lx, ly);
        assert_eq!(x.poses(), y.poses());
    }
}

#[test]
fn augmented_grasps_still_succeed_on_the_moved_object() {
    let cfg = desk(256, 32);
    let ds = generate_dataset(&cfg, 2).unwrap();
    let oracle = GraspOracle::new(&GripperSpec::default()).unwrap();
    let aug = AugmentConfig { jitter_sd: 0.0, max_dropout: 0.0, rotate: true };
    let mut rng = common::rng(3);
    for entry in &ds.objects {
        let out = augment(&entry.cloud, &entry.poses(), &aug, &mut rng).unwrap();
        let moved = entry.object.transformed(&out.transform);
        for (orig, g) in entry.poses().iter().zip(&out.grasps) {
            let expect = out.transform.compose(orig);
            assert!(norm(sub(expect.translation, g.translation)) < 1e-12);
            assert!(oracle.evaluate(&moved, g).success);
        }
        for (p, q) in entry.cloud.points().iter().zip(out.cloud.points()) {
            assert!(norm(sub(out.transform.apply(*p), *q)) < 1e-12);
        }
    }
}

fn cloud_strategy() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.1f64..0.1), 8..96)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Size is kept, the output is recentered, and grasps keep their pose
    /// relative to the cloud up to jitter and dropout.
    #[test]
    fn augmentation_invariants(points in cloud_strategy(), seed in 0u64..1000, dropout in 0.0f64..0.9) {
        let pc = PointCloud::new(points).unwrap();
        let (pc, _, _) = graspldm::geom::centroid_frame(&pc, &[]).unwrap();
        let grasps = vec![graspldm::geom::RigidTransform::from_translation([0.01, 0.02, -0.03])];
        let cfg = AugmentConfig { jitter_sd: 0.005, max_dropout: dropout, rotate: true };
        let out = augment(&pc, &grasps, &cfg, &mut common::rng(seed)).unwrap();
        prop_assert_eq!(out.cloud.len(), pc.len());
        prop_assert!(out.cloud.is_centered());
        prop_assert!(norm(out.cloud.centroid().unwrap()) < 1e-9);
        let g = out.transform.compose(&grasps[0]);
        prop_assert!(norm(sub(g.translation, out.grasps[0].translation)) < 1e-12);
    }

    #[test]
    fn no_op_augmentation_is_identity(points in cloud_strategy()) {
        let pc = PointCloud::new(points).unwrap();
        let (pc, _, _) = graspldm::geom::centroid_frame(&pc, &[]).unwrap();
        let grasps = vec![graspldm::geom::RigidTransform::from_translation([0.0, 0.0, 0.05])];
        let out = augment(&pc, &grasps, &AugmentConfig::none(), &mut common::rng(0)).unwrap();
        prop_assert_eq!(out.cloud.points(), pc.points());
        prop_assert_eq!(out.grasps, grasps);
    }
}

#[test]
fn held_out_objects_differ_from_training_objects() {
    let (train, held) = desk_suite();
    assert_eq!((train.len(), held.len()), (8, 4));
    for h in &held {
        assert!(!train.iter().any(|t| t.kind == h.kind && t.dims == h.dims));
    }
}
