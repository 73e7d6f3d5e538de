use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use voxelforge::volume::{minmax_normalize, pad_or_crop};
use voxelforge::{Geometry, IntensityDomain, Shape, Volume};

fn volume(shape: Shape, seed: u64) -> Volume {
    // cheap deterministic texture, distinct per voxel
    let data = (0..shape.len())
        .map(|n| ((n as u64 * 2654435761 + seed) % 1000) as f32)
        .collect();
    let geom = Geometry {
        spacing: Vector3::new(0.8, 1.1, 2.5),
        origin: Vector3::new(-12.0, 30.5, 7.0),
        direction: Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
    };
    Volume::from_f32(shape, geom, data, IntensityDomain::Real).unwrap()
}

fn shapes() -> impl Strategy<Value = Shape> {
    (1usize..4, 1usize..20, 1usize..20).prop_map(|(d, h, w)| Shape::new(d, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pad_or_crop_is_idempotent(shape in shapes(), th in 1usize..24, tw in 1usize..24, seed in any::<u64>()) {
        let v = volume(shape, seed);
        let once = pad_or_crop(&v, (th, tw)).unwrap();
        prop_assert_eq!(once.shape(), Shape::new(shape.depth, th, tw));
        prop_assert_eq!(pad_or_crop(&once, (th, tw)).unwrap(), once);
    }

    #[test]
    fn crop_undoes_pad(shape in shapes(), dh in 0usize..6, dw in 0usize..6, seed in any::<u64>()) {
        let v = volume(shape, seed);
        let padded = pad_or_crop(&v, (shape.height + dh, shape.width + dw)).unwrap();
        let back = pad_or_crop(&padded, (shape.height, shape.width)).unwrap();
        prop_assert_eq!(back.data(), v.data());
        prop_assert_eq!(back.geometry(), v.geometry());
    }

    #[test]
    fn pad_or_crop_keeps_world_positions(shape in shapes(), th in 1usize..24, tw in 1usize..24) {
        let v = volume(shape, 1);
        let out = pad_or_crop(&v, (th, tw)).unwrap();
        // map every output voxel back to its source by world position
        for k in 0..shape.depth {
            for j in 0..th {
                for i in 0..tw {
                    let w = out.world_of(k, j, i);
                    let src = v.geometry().world_to_index(w);
                    let (si, sj) = (src.x.round(), src.y.round());
                    prop_assert!((src.x - si).abs() < 1e-9 && (src.y - sj).abs() < 1e-9);
                    prop_assert!((src.z - k as f64).abs() < 1e-9);
                    let inside = si >= 0.0 && sj >= 0.0 && (si as usize) < shape.width && (sj as usize) < shape.height;
                    let want = if inside { v.get(k, sj as usize, si as usize) } else { 0.0 };
                    prop_assert_eq!(out.get(k, j, i), want);
                }
            }
        }
    }

    #[test]
    fn minmax_spans_unit_interval(shape in shapes(), seed in any::<u64>()) {
        let v = volume(shape, seed);
        let n = minmax_normalize(&v);
        prop_assert_eq!(n.domain(), IntensityDomain::Unit);
        let (lo, hi) = v.data().min_max().unwrap();
        let (nlo, nhi) = n.data().min_max().unwrap();
        if hi > lo {
            prop_assert_eq!((nlo, nhi), (0.0, 1.0));
        } else {
            prop_assert_eq!((nlo, nhi), (0.0, 0.0));
        }
    }
}

#[test]
fn odd_difference_goes_to_high_side() {
    let v = Volume::from_f32(
        Shape::new(1, 1, 2),
        Geometry::default(),
        vec![5.0, 6.0],
        IntensityDomain::Real,
    )
    .unwrap();
    let p = pad_or_crop(&v, (1, 5)).unwrap();
    assert_eq!(p.to_f32_vec(), vec![0.0, 5.0, 6.0, 0.0, 0.0]);
    let c = pad_or_crop(&p, (1, 2)).unwrap();
    assert_eq!(c.to_f32_vec(), vec![5.0, 6.0]);
}

#[test]
fn depth_is_never_resized() {
    let v = volume(Shape::new(7, 10, 12), 3);
    assert_eq!(pad_or_crop(&v, (4, 30)).unwrap().shape().depth, 7);
}
