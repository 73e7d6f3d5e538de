use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxelforge::patch::{
    aggregate, extract_pairs, lattice, make_boost_weights, AggregationBuffer, ExtractOptions, PatchWeighting, CONTEXT,
    INPUT_EDGE, TARGET_EDGE,
};
use voxelforge::synth::blob_volume;
use voxelforge::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

fn covered(shape: Shape, k: usize, j: usize, i: usize) -> bool {
    [k, j, i]
        .iter()
        .zip(shape.dims())
        .all(|(&p, n)| p >= CONTEXT && p < n - CONTEXT)
}

fn shapes() -> impl Strategy<Value = Shape> {
    (32usize..46, 32usize..46, 32usize..46).prop_map(|(d, h, w)| Shape::new(d, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn extract_then_aggregate_is_identity(shape in shapes(), stride in 1usize..=16, seed in any::<u64>(), tapered in any::<bool>()) {
        let ct = blob_volume(shape, 4, seed);
        let mri = blob_volume(shape, 4, seed ^ 1);
        let opts = ExtractOptions { stride, ..Default::default() };
        let weighting = if tapered { PatchWeighting::CenterTapered } else { PatchWeighting::Uniform };
        let pairs: Vec<_> = extract_pairs(&mri, &ct, &opts).unwrap().map(|p| (p.target, p.anchor)).collect();
        let out = aggregate(pairs, shape, weighting).unwrap();
        for k in 0..shape.depth {
            for j in 0..shape.height {
                for i in 0..shape.width {
                    if covered(shape, k, j, i) {
                        prop_assert!((out.get(k, j, i) - ct.get(k, j, i)).abs() < 1e-6 * 1000.0, "{k},{j},{i}");
                    } else {
                        prop_assert_eq!(out.get(k, j, i), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn input_context_surrounds_target(seed in any::<u64>(), stride in 4usize..=16) {
        let shape = Shape::new(36, 40, 33);
        let mri = blob_volume(shape, 3, seed);
        let ct = blob_volume(shape, 3, seed + 7);
        for p in extract_pairs(&mri, &ct, &ExtractOptions { stride, ..Default::default() }).unwrap() {
            let [k0, j0, i0] = p.input_corner();
            prop_assert_eq!([k0 + CONTEXT, j0 + CONTEXT, i0 + CONTEXT], p.anchor);
            prop_assert!(k0 + INPUT_EDGE <= shape.depth && j0 + INPUT_EDGE <= shape.height && i0 + INPUT_EDGE <= shape.width);
            // center voxel of the target and the matching input voxel
            let c = TARGET_EDGE / 2;
            let t = p.target[(c * TARGET_EDGE + c) * TARGET_EDGE + c];
            prop_assert_eq!(t as f64, ct.get(p.anchor[0] + c, p.anchor[1] + c, p.anchor[2] + c));
            let ci = CONTEXT + c;
            let m = p.input[(ci * INPUT_EDGE + ci) * INPUT_EDGE + ci];
            prop_assert_eq!(m as f64, mri.get(p.anchor[0] + c, p.anchor[1] + c, p.anchor[2] + c));
        }
    }

    #[test]
    fn lattice_covers_span(n in 32usize..300, stride in 1usize..=16) {
        let l = lattice(n, stride);
        prop_assert_eq!(l[0], CONTEXT);
        prop_assert_eq!(*l.last().unwrap(), n - TARGET_EDGE - CONTEXT);
        prop_assert!(l.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride));
    }
}

#[test]
fn aggregation_is_order_independent() {
    let shape = Shape::new(40, 44, 36);
    let ct = blob_volume(shape, 6, 5);
    // add noise so overlapping patches disagree
    let mut pairs: Vec<(Vec<f32>, [usize; 3])> = extract_pairs(
        &ct,
        &ct,
        &ExtractOptions {
            stride: 5,
            ..Default::default()
        },
    )
    .unwrap()
    .enumerate()
    .map(|(n, p)| (p.target.iter().map(|v| v + (n % 7) as f32 * 0.37).collect(), p.anchor))
    .collect();
    let a = aggregate(pairs.clone(), shape, PatchWeighting::CenterTapered).unwrap();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let b = aggregate(pairs, shape, PatchWeighting::CenterTapered).unwrap();
    let worst = a
        .to_f32_vec()
        .iter()
        .zip(b.to_f32_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1e-6 * 1000.0, "{worst}");
}

#[test]
fn uniform_weights_count_covering_patches() {
    let shape = Shape::new(34, 40, 37);
    let anchors: Vec<[usize; 3]> = {
        let ls = shape.dims().map(|n| lattice(n, 6));
        let mut v = Vec::new();
        for &k in &ls[0] {
            for &j in &ls[1] {
                for &i in &ls[2] {
                    v.push([k, j, i]);
                }
            }
        }
        v
    };
    let mut buf = AggregationBuffer::new(shape, PatchWeighting::Uniform);
    let ones = vec![1.0f32; TARGET_EDGE.pow(3)];
    for &a in &anchors {
        buf.add(&ones, a).unwrap();
    }
    let weights = buf.weights().to_vec();
    for k in 0..shape.depth {
        for j in 0..shape.height {
            for i in 0..shape.width {
                let count = anchors
                    .iter()
                    .filter(|a| {
                        [k, j, i]
                            .iter()
                            .zip(a.iter())
                            .all(|(&p, &lo)| p >= lo && p < lo + TARGET_EDGE)
                    })
                    .count();
                assert_eq!(weights[shape.index(k, j, i)], count as f32, "{k},{j},{i}");
            }
        }
    }
}

#[test]
#[cfg(feature = "parallel")]
fn sharded_matches_sequential() {
    let shape = Shape::new(48, 40, 40);
    let ct = blob_volume(shape, 6, 2);
    let pairs: Vec<_> = extract_pairs(&ct, &ct, &ExtractOptions::default())
        .unwrap()
        .map(|p| (p.target, p.anchor))
        .collect();
    let seq = aggregate(pairs.clone(), shape, PatchWeighting::CenterTapered).unwrap();
    for shards in [1, 3, 7, 48] {
        let par = voxelforge::patch::aggregate_sharded(&pairs, shape, PatchWeighting::CenterTapered, shards).unwrap();
        assert_eq!(par, seq, "{shards} shards");
    }
}

#[test]
fn boost_weights_follow_mask() {
    let shape = Shape::new(2, 3, 4);
    let bits: Vec<f32> = (0..shape.len()).map(|n| ((n + n / 4) % 2) as f32).collect();
    let mask = Volume::new(
        shape,
        Geometry::default(),
        VoxelData::F32(bits.clone()),
        IntensityDomain::Mask,
    )
    .unwrap();
    let w = make_boost_weights(&mask, 0.5).unwrap().to_volume(&Geometry::default());
    for (n, &b) in bits.iter().enumerate() {
        assert_eq!(w.data().get(n), if b == 1.0 { 1.5 } else { 1.0 });
    }
    let w = make_boost_weights(&mask, 0.0).unwrap().to_volume(&Geometry::default());
    assert!(w.to_f32_vec().iter().all(|&x| x == 1.0));
    assert!(make_boost_weights(&mask, -1.0).is_err());
}

#[test]
fn small_volumes_and_bad_strides_are_rejected() {
    let v = blob_volume(Shape::new(31, 40, 40), 2, 1);
    assert!(extract_pairs(&v, &v, &ExtractOptions::default()).is_err());
    let v = blob_volume(Shape::cube(32), 2, 1);
    assert!(extract_pairs(
        &v,
        &v,
        &ExtractOptions {
            stride: 0,
            ..Default::default()
        }
    )
    .is_err());
    assert_eq!(extract_pairs(&v, &v, &ExtractOptions::default()).unwrap().count(), 1);
}
