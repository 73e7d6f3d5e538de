use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxelforge::register::{
    joint_histogram, mutual_information, register, resample, Binning, JointHistogram, RegistrationConfig, RegistrationWarning,
    RigidTransform,
};
use voxelforge::synth::{blob_volume, random_rigid, remap_modality};
use voxelforge::volume::minmax_normalize;
use voxelforge::{IntensityDomain, Shape, Volume};

fn center(v: &Volume) -> [f64; 3] {
    let c = v.geometry().center(v.shape());
    [c.x, c.y, c.z]
}

fn recovery_error(found: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let err = found.inverse().compose(truth);
    (err.center_displacement(), err.rotation_angle().to_degrees())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn mi_is_symmetric_and_bounded(a in prop::collection::vec(0.0f64..1.0, 50..400), seed in any::<u64>(), bins in 8usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|&x| (x * x + rand::Rng::random_range(&mut rng, 0.0..0.3)).min(1.0)).collect();
        let (ba, bb) = (Binning::uniform(0.0, 1.0, bins), Binning::uniform(0.0, 1.0, bins + 3));
        let h = JointHistogram::from_samples(&a, &b, &ba, &bb);
        let t = JointHistogram::from_samples(&b, &a, &bb, &ba);
        prop_assert_eq!(h.total(), a.len() as u64);
        prop_assert_eq!(h.marginal_fixed().iter().sum::<u64>(), h.total());
        prop_assert_eq!(h.marginal_moving().iter().sum::<u64>(), h.total());
        prop_assert_eq!(&h.transposed(), &t);
        let mi = h.mutual_information();
        prop_assert!((mi - t.mutual_information()).abs() < 1e-9);
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= h.entropy_fixed().min(h.entropy_moving()) + 1e-9);
    }

    #[test]
    fn resample_round_trip_is_close_inside(seed in any::<u64>()) {
        let v = smooth_field(Shape::cube(24));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_rigid(&mut rng, 1.5, 4.0, center(&v));
        let back = resample(&resample(&v, &t, &v), &t.inverse(), &v);
        prop_assert_eq!(back.domain(), IntensityDomain::Unit);
        // a core far enough from the edges that no sample fell outside
        let mut worst: f64 = 0.0;
        for k in 8..16 {
            for j in 8..16 {
                for i in 8..16 {
                    worst = worst.max((back.get(k, j, i) - v.get(k, j, i)).abs());
                }
            }
        }
        prop_assert!(worst < 1e-3, "{worst}");
    }
}

/// Slowly varying Unit-domain field; trilinear error stays near h²·|f''|/8.
fn smooth_field(shape: Shape) -> Volume {
    let mut data = Vec::with_capacity(shape.len());
    for k in 0..shape.depth {
        for j in 0..shape.height {
            for i in 0..shape.width {
                let (x, y, z) = (i as f64, j as f64, k as f64);
                data.push((0.5 + 0.2 * (x / 15.0 + y / 20.0).sin() * (z / 18.0).cos()) as f32);
            }
        }
    }
    Volume::from_f32(shape, Default::default(), data, IntensityDomain::Unit).unwrap()
}

#[test]
fn resample_identity_is_exact() {
    let v = minmax_normalize(&blob_volume(Shape::new(10, 12, 14), 4, 3));
    let out = resample(&v, &RigidTransform::identity(center(&v)), &v);
    assert_eq!(out.to_f32_vec(), v.to_f32_vec());
}

#[test]
fn identical_volumes_have_mi_equal_to_entropy() {
    let v = blob_volume(Shape::cube(16), 5, 8);
    let h = joint_histogram(&v, &v, 32).unwrap();
    assert!((h.mutual_information() - h.entropy_fixed()).abs() < 1e-9);
    let flat = Volume::from_f32(Shape::cube(4), Default::default(), vec![3.0; 64], IntensityDomain::Real).unwrap();
    assert!(mutual_information(&flat, &flat, 16).is_err());
}

#[test]
fn recovers_multimodal_rigid_motion() {
    for case in 0..2u64 {
        let moving = blob_volume(Shape::cube(48), 12, 500 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(case + 40);
        let truth = random_rigid(&mut rng, 6.0, 6.0, center(&moving));
        let fixed = remap_modality(&resample(&moving, &truth, &moving));
        let r = register(&fixed, &moving, &RegistrationConfig::default()).unwrap();
        let (dt, da) = recovery_error(&r.transform, &truth);
        assert!(dt < 0.5 && da < 0.5, "case {case}: {dt:.3} mm, {da:.3} deg");
        assert!(r.final_mi > r.trace[0].mi);
        assert_eq!(r.warning, None);
    }
}

#[test]
fn inverted_intensities_register_the_same() {
    let moving = blob_volume(Shape::cube(40), 10, 77);
    let truth = RigidTransform::new([0.0, 0.04, -0.06], [2.0, -3.0, 1.5], center(&moving));
    let moved = resample(&moving, &truth, &moving);
    let inverted: Vec<f32> = moved.to_f32_vec().iter().map(|v| 1000.0 - v).collect();
    let fixed = Volume::from_f32(moved.shape(), *moved.geometry(), inverted, IntensityDomain::Real).unwrap();
    let r = register(&fixed, &moving, &RegistrationConfig::default()).unwrap();
    let (dt, da) = recovery_error(&r.transform, &truth);
    assert!(dt < 0.5 && da < 0.5, "{dt:.3} mm, {da:.3} deg");
}

#[test]
fn aligned_input_reports_no_improvement() {
    let v = blob_volume(Shape::cube(24), 6, 4);
    let cfg = RegistrationConfig {
        pyramid_levels: 1,
        ..Default::default()
    };
    let r = register(&v, &v, &cfg).unwrap();
    assert_eq!(r.warning, Some(RegistrationWarning::DidNotImprove));
    assert!(r.transform.rotation_angle() < 1e-12 && r.transform.center_displacement() < 1e-12);
}

#[test]
fn bad_configs_are_rejected() {
    let v = blob_volume(Shape::cube(8), 2, 1);
    for cfg in [
        RegistrationConfig {
            bins: 4,
            ..Default::default()
        },
        RegistrationConfig {
            pyramid_levels: 0,
            ..Default::default()
        },
        RegistrationConfig {
            sampling_fraction: 0.0,
            ..Default::default()
        },
    ] {
        assert!(register(&v, &v, &cfg).is_err());
    }
}
