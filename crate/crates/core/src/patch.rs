//! Aligned 3D patch extraction (32³ MRI context → 16³ CT target), weighted
//! overlap aggregation and gradient-boost weight maps.
//!
//! A patch pair is addressed by the voxel index `(k, j, i)` of the low
//! corner of its target cube. The input cube shares the same center, so its
//! low corner sits [`CONTEXT`] voxels lower on every axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

pub const INPUT_EDGE: usize = 32;
pub const TARGET_EDGE: usize = 16;
pub const CONTEXT: usize = (INPUT_EDGE - TARGET_EDGE) / 2;
pub const INPUT_LEN: usize = INPUT_EDGE * INPUT_EDGE * INPUT_EDGE;
pub const TARGET_LEN: usize = TARGET_EDGE * TARGET_EDGE * TARGET_EDGE;

#[derive(Debug, Error, PartialEq)]
pub enum PatchError {
    #[error("volume {0} is smaller than {INPUT_EDGE} voxels along some axis")]
    VolumeTooSmall(Shape),
    #[error("input and target grids differ: {0} vs {1}")]
    GridMismatch(Shape, Shape),
    #[error("stride must be positive")]
    InvalidStride,
    #[error("patch at anchor {anchor:?} with edge {edge} leaves the {shape} grid")]
    AnchorOutOfBounds { anchor: [usize; 3], edge: usize, shape: Shape },
    #[error("patch holds {actual} voxels, expected {expected}")]
    PatchSize { expected: usize, actual: usize },
    #[error("boost lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// 32³ MRI context, depth-major.
    pub input: Vec<f32>,
    /// 16³ CT target, depth-major.
    pub target: Vec<f32>,
    /// Low corner `(k, j, i)` of the target cube in the full volume.
    pub anchor: [usize; 3],
}

impl PatchPair {
    pub fn input_corner(&self) -> [usize; 3] {
        self.anchor.map(|a| a - CONTEXT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub stride: usize,
    /// Skip pairs whose target has a smaller fraction of nonzero voxels.
    pub min_foreground_fraction: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            stride: 8,
            min_foreground_fraction: 0.0,
        }
    }
}

/// Target anchors along one axis of extent `n`: a regular lattice from
/// `CONTEXT`, with the last position snapped to `n - TARGET_EDGE - CONTEXT`.
pub fn lattice(n: usize, stride: usize) -> Vec<usize> {
    let first = CONTEXT;
    let last = n - TARGET_EDGE - CONTEXT;
    let mut out: Vec<usize> = (first..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

fn copy_cube(src: &[f32], shape: Shape, corner: [usize; 3], edge: usize, dst: &mut Vec<f32>) {
    dst.clear();
    for k in corner[0]..corner[0] + edge {
        for j in corner[1]..corner[1] + edge {
            let row = shape.index(k, j, corner[2]);
            dst.extend_from_slice(&src[row..row + edge]);
        }
    }
}

/// The 16³ cube of `values` (a full depth-major grid) at a target anchor.
pub fn target_cube(values: &[f32], shape: Shape, anchor: [usize; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(TARGET_LEN);
    copy_cube(values, shape, anchor, TARGET_EDGE, &mut out);
    out
}

/// Iterator over patch pairs in depth-major anchor order.
pub struct PatchPairs {
    shape: Shape,
    input: Vec<f32>,
    target: Vec<f32>,
    anchors: [Vec<usize>; 3],
    next: usize,
    min_foreground: f64,
}

impl PatchPairs {
    pub fn anchor_count(&self) -> usize {
        self.anchors.iter().map(Vec::len).product()
    }
}

impl Iterator for PatchPairs {
    type Item = PatchPair;

    fn next(&mut self) -> Option<PatchPair> {
        let [ak, aj, ai] = &self.anchors;
        while self.next < self.anchor_count() {
            let n = self.next;
            self.next += 1;
            let anchor = [ak[n / (aj.len() * ai.len())], aj[(n / ai.len()) % aj.len()], ai[n % ai.len()]];
            let mut target = Vec::with_capacity(TARGET_LEN);
            copy_cube(&self.target, self.shape, anchor, TARGET_EDGE, &mut target);
            if self.min_foreground > 0.0 {
                let fg = target.iter().filter(|&&x| x != 0.0).count() as f64 / TARGET_LEN as f64;
                if fg < self.min_foreground {
                    continue;
                }
            }
            let mut input = Vec::with_capacity(INPUT_LEN);
            copy_cube(&self.input, self.shape, anchor.map(|a| a - CONTEXT), INPUT_EDGE, &mut input);
            return Some(PatchPair { input, target, anchor });
        }
        None
    }
}

/// Streams aligned (32³ MRI, 16³ CT) pairs on a regular anchor lattice.
pub fn extract_pairs(mri: &Volume, ct: &Volume, opts: &ExtractOptions) -> Result<PatchPairs, PatchError> {
    let shape = mri.shape();
    if shape != ct.shape() {
        return Err(PatchError::GridMismatch(shape, ct.shape()));
    }
    if opts.stride == 0 {
        return Err(PatchError::InvalidStride);
    }
    if shape.dims().iter().any(|&n| n < INPUT_EDGE) {
        return Err(PatchError::VolumeTooSmall(shape));
    }
    Ok(PatchPairs {
        shape,
        input: mri.to_f32_vec(),
        target: ct.to_f32_vec(),
        anchors: shape.dims().map(|n| lattice(n, opts.stride)),
        next: 0,
        min_foreground: opts.min_foreground_fraction,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchWeighting {
    #[default]
    Uniform,
    /// Separable triangular weight peaking at the patch center.
    CenterTapered,
}

impl PatchWeighting {
    /// Weight of each voxel of a 16³ patch.
    pub fn kernel(self) -> Vec<f32> {
        match self {
            PatchWeighting::Uniform => vec![1.0; TARGET_LEN],
            PatchWeighting::CenterTapered => {
                let tri: Vec<f32> = (0..TARGET_EDGE)
                    .map(|t| (t + 1).min(TARGET_EDGE - t) as f32 / (TARGET_EDGE / 2) as f32)
                    .collect();
                let mut w = Vec::with_capacity(TARGET_LEN);
                for k in 0..TARGET_EDGE {
                    for j in 0..TARGET_EDGE {
                        for i in 0..TARGET_EDGE {
                            w.push(tri[k] * tri[j] * tri[i]);
                        }
                    }
                }
                w
            }
        }
    }
}

/// Streaming `(Σ wᵢ·patchᵢ, Σ wᵢ)` accumulator over a depth slab
/// `[z0, z0 + shape.depth)` of a volume.
#[derive(Clone, Debug)]
pub struct AggregationBuffer {
    full: Shape,
    z0: usize,
    slab: Shape,
    sum: Vec<f64>,
    weight: Vec<f32>,
    kernel: Vec<f32>,
}

impl AggregationBuffer {
    pub fn new(shape: Shape, weighting: PatchWeighting) -> Self {
        AggregationBuffer::slab(shape, 0..shape.depth, weighting)
    }

    pub fn slab(full: Shape, depth: std::ops::Range<usize>, weighting: PatchWeighting) -> Self {
        let slab = Shape::new(depth.len(), full.height, full.width);
        AggregationBuffer {
            full,
            z0: depth.start,
            slab,
            sum: vec![0.0; slab.len()],
            weight: vec![0.0; slab.len()],
            kernel: weighting.kernel(),
        }
    }

    /// Adds the part of a 16³ patch that falls inside this buffer's slab.
    pub fn add(&mut self, patch: &[f32], anchor: [usize; 3]) -> Result<(), PatchError> {
        if patch.len() != TARGET_LEN {
            return Err(PatchError::PatchSize {
                expected: TARGET_LEN,
                actual: patch.len(),
            });
        }
        let dims = self.full.dims();
        if (0..3).any(|a| anchor[a] + TARGET_EDGE > dims[a]) {
            return Err(PatchError::AnchorOutOfBounds {
                anchor,
                edge: TARGET_EDGE,
                shape: self.full,
            });
        }
        let k_lo = anchor[0].max(self.z0);
        let k_hi = (anchor[0] + TARGET_EDGE).min(self.z0 + self.slab.depth);
        for k in k_lo..k_hi {
            let pk = k - anchor[0];
            for pj in 0..TARGET_EDGE {
                let dst = self.slab.index(k - self.z0, anchor[1] + pj, anchor[2]);
                let src = (pk * TARGET_EDGE + pj) * TARGET_EDGE;
                let sum = &mut self.sum[dst..dst + TARGET_EDGE];
                let weight = &mut self.weight[dst..dst + TARGET_EDGE];
                let values = &patch[src..src + TARGET_EDGE];
                let kernel = &self.kernel[src..src + TARGET_EDGE];
                for n in 0..TARGET_EDGE {
                    sum[n] += (kernel[n] * values[n]) as f64;
                    weight[n] += kernel[n];
                }
            }
        }
        Ok(())
    }

    /// Sums another buffer over the same slab into this one.
    pub fn merge(&mut self, other: &AggregationBuffer) {
        assert_eq!((self.z0, self.slab), (other.z0, other.slab));
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += b);
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    /// Weighted mean per voxel, 0 where nothing was accumulated.
    pub fn finish(self) -> Vec<f32> {
        self.sum
            .iter()
            .zip(&self.weight)
            .map(|(&s, &w)| if w > 0.0 { (s / w as f64) as f32 } else { 0.0 })
            .collect()
    }
}

fn into_volume(shape: Shape, voxels: Vec<f32>) -> Volume {
    let domain = if voxels.iter().all(|x| (0.0..=1.0).contains(x)) {
        IntensityDomain::Unit
    } else {
        IntensityDomain::Real
    };
    Volume::new(shape, Geometry::default(), VoxelData::F32(voxels), domain).expect("aggregated grid is valid")
}

/// Reassembles a volume from overlapping 16³ patches by weighted averaging.
/// The result has unit geometry; callers reattach the source geometry.
pub fn aggregate<I, P>(patches: I, shape: Shape, weighting: PatchWeighting) -> Result<Volume, PatchError>
where
    I: IntoIterator<Item = (P, [usize; 3])>,
    P: AsRef<[f32]>,
{
    let mut buf = AggregationBuffer::new(shape, weighting);
    for (patch, anchor) in patches {
        buf.add(patch.as_ref(), anchor)?;
    }
    Ok(into_volume(shape, buf.finish()))
}

/// [`aggregate`] with one worker per depth slab. Every worker scans the
/// patch list and accumulates only its own slab, so no locking is needed and
/// the result matches the sequential path exactly.
#[cfg(feature = "parallel")]
pub fn aggregate_sharded<P>(
    patches: &[(P, [usize; 3])],
    shape: Shape,
    weighting: PatchWeighting,
    shards: usize,
) -> Result<Volume, PatchError>
where
    P: AsRef<[f32]> + Sync,
{
    use rayon::prelude::*;
    let shards = shards.clamp(1, shape.depth);
    let per = shape.depth.div_ceil(shards);
    let slabs: Vec<Result<Vec<f32>, PatchError>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = (s * per).min(shape.depth);
            let hi = ((s + 1) * per).min(shape.depth);
            let mut buf = AggregationBuffer::slab(shape, lo..hi, weighting);
            for (patch, anchor) in patches {
                if anchor[0] < hi && anchor[0] + TARGET_EDGE > lo {
                    buf.add(patch.as_ref(), *anchor)?;
                } else if anchor.iter().zip(shape.dims()).any(|(a, n)| a + TARGET_EDGE > n) {
                    return Err(PatchError::AnchorOutOfBounds {
                        anchor: *anchor,
                        edge: TARGET_EDGE,
                        shape,
                    });
                }
            }
            Ok(buf.finish())
        })
        .collect();
    let mut voxels = Vec::with_capacity(shape.len());
    for slab in slabs {
        voxels.extend(slab?);
    }
    Ok(into_volume(shape, voxels))
}

/// Per-voxel loss weights: 1 outside the mask, `1 + lambda` inside.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostWeightMap {
    pub shape: Shape,
    pub weights: Vec<f32>,
}

impl BoostWeightMap {
    pub fn to_volume(&self, geometry: &Geometry) -> Volume {
        Volume::new(
            self.shape,
            *geometry,
            VoxelData::F32(self.weights.clone()),
            IntensityDomain::Real,
        )
        .expect("weight grid is valid")
    }
}

pub fn make_boost_weights(mask: &Volume, lambda_boost: f64) -> Result<BoostWeightMap, PatchError> {
    if !(lambda_boost >= 0.0 && lambda_boost.is_finite()) {
        return Err(PatchError::InvalidLambda(lambda_boost));
    }
    let weights = (0..mask.len())
        .map(|idx| {
            let m = if mask.data().get(idx) != 0.0 { 1.0 } else { 0.0 };
            (1.0 + lambda_boost * m) as f32
        })
        .collect();
    Ok(BoostWeightMap {
        shape: mask.shape(),
        weights,
    })
}
