//! Binary hole filling, CT table/background cleanup and slice trimming.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};
use nalgebra::Vector3;

#[derive(Debug, Error, PartialEq)]
pub enum MorphError {
    #[error("threshold {0} leaves no foreground voxels")]
    EmptyForeground(f64),
    #[error("slice range [{lo}, {hi}) is invalid for depth {depth}")]
    RangeOutOfBounds { lo: usize, hi: usize, depth: usize },
    #[error("slice ranges [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingRanges(usize, usize, usize, usize),
    #[error("trimming would remove all {0} slices")]
    EmptyVolume(usize),
}

/// Neighborhood used for flood fill and component labeling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// 6-neighborhood.
    #[default]
    Face,
    /// 26-neighborhood (faces, edges and corners).
    Full,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dk in -1isize..=1 {
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let order = dk.abs() + dj.abs() + di.abs();
                    let keep = match self {
                        Connectivity::Face => order == 1,
                        Connectivity::Full => order >= 1,
                    };
                    if keep {
                        out.push([dk, dj, di]);
                    }
                }
            }
        }
        out
    }
}

struct Neighbors {
    shape: Shape,
    offsets: Vec<[isize; 3]>,
}

impl Neighbors {
    fn new(shape: Shape, conn: Connectivity) -> Self {
        Neighbors {
            shape,
            offsets: conn.offsets(),
        }
    }

    #[inline]
    fn for_each(&self, idx: usize, mut f: impl FnMut(usize)) {
        let (k, j, i) = self.shape.unravel(idx);
        let dims = [
            self.shape.depth as isize,
            self.shape.height as isize,
            self.shape.width as isize,
        ];
        for [dk, dj, di] in &self.offsets {
            let (nk, nj, ni) = (k as isize + dk, j as isize + dj, i as isize + di);
            if nk >= 0 && nj >= 0 && ni >= 0 && nk < dims[0] && nj < dims[1] && ni < dims[2] {
                f(self.shape.index(nk as usize, nj as usize, ni as usize));
            }
        }
    }
}

// Axes of extent 1 have no border, so a single slice fills like a 2D image.
fn on_border(shape: Shape, idx: usize) -> bool {
    let (k, j, i) = shape.unravel(idx);
    let edge = |p: usize, n: usize| n > 1 && (p == 0 || p + 1 == n);
    edge(k, shape.depth) || edge(j, shape.height) || edge(i, shape.width)
}

/// Sets every background voxel that is not connected to the grid border to
/// foreground.
pub fn fill_holes_grid(mask: &[bool], shape: Shape, conn: Connectivity) -> Vec<bool> {
    assert_eq!(mask.len(), shape.len());
    let nb = Neighbors::new(shape, conn);
    let mut outside = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    for idx in 0..mask.len() {
        if !mask[idx] && on_border(shape, idx) {
            outside[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(idx) = queue.pop_front() {
        nb.for_each(idx, |n| {
            if !mask[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        });
    }
    outside.into_iter().map(|o| !o).collect()
}

/// Labels foreground components; returns per-voxel labels (0 = background,
/// components numbered from 1 in scan order) and component sizes.
pub fn label_components(mask: &[bool], shape: Shape, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let nb = Neighbors::new(shape, conn);
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0usize;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            nb.for_each(idx, |n| {
                if mask[n] && labels[n] == 0 {
                    labels[n] = label;
                    queue.push_back(n);
                }
            });
        }
        sizes.push(size);
    }
    (labels, sizes)
}

fn mask_volume(like: &Volume, bits: &[bool]) -> Volume {
    let voxels = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Volume::new(like.shape(), *like.geometry(), VoxelData::F32(voxels), IntensityDomain::Mask).expect("mask shares a valid grid")
}

fn bits(v: &Volume) -> Vec<bool> {
    (0..v.len()).map(|idx| v.data().get(idx) != 0.0).collect()
}

/// Hole filling on a binary volume (nonzero voxels are foreground).
pub fn fill_holes(mask: &Volume, conn: Connectivity) -> Volume {
    mask_volume(mask, &fill_holes_grid(&bits(mask), mask.shape(), conn))
}

/// Threshold at 10% of the intensity range above the minimum.
pub fn default_threshold(ct: &Volume) -> f64 {
    let (lo, hi) = ct.data().min_max().expect("volumes are never empty");
    lo + 0.1 * (hi - lo)
}

/// Removes the CT table and background noise: keeps the hole-filled largest
/// connected component of `ct > threshold`. Returns the masked volume and the
/// mask.
pub fn clean_ct(ct: &Volume, threshold: f64, conn: Connectivity) -> Result<(Volume, Volume), MorphError> {
    let shape = ct.shape();
    let fg: Vec<bool> = (0..ct.len()).map(|idx| ct.data().get(idx) > threshold).collect();
    let (labels, sizes) = label_components(&fg, shape, conn);
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(n, _)| n as u32 + 1)
        .ok_or(MorphError::EmptyForeground(threshold))?;
    let component: Vec<bool> = labels.iter().map(|&l| l == largest).collect();
    let filled = fill_holes_grid(&component, shape, conn);
    let data = match ct.data() {
        VoxelData::U16(v) => VoxelData::U16(v.iter().zip(&filled).map(|(&x, &m)| if m { x } else { 0 }).collect()),
        VoxelData::I16(v) => VoxelData::I16(v.iter().zip(&filled).map(|(&x, &m)| if m { x } else { 0 }).collect()),
        VoxelData::F32(v) => VoxelData::F32(v.iter().zip(&filled).map(|(&x, &m)| if m { x } else { 0.0 }).collect()),
    };
    let cleaned = ct.with_voxels(data, ct.domain()).expect("same grid");
    Ok((cleaned, mask_volume(ct, &filled)))
}

/// Transverse slice ranges to delete from one subject, `[lo, hi)` each.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimManifest {
    pub subject: String,
    #[serde(default)]
    pub trim: Vec<[usize; 2]>,
}

impl TrimManifest {
    pub fn removed(&self) -> usize {
        self.trim.iter().map(|[lo, hi]| hi.saturating_sub(*lo)).sum()
    }
}

fn validate_ranges(ranges: &[[usize; 2]], depth: usize) -> Result<Vec<[usize; 2]>, MorphError> {
    let mut sorted = ranges.to_vec();
    for &[lo, hi] in &sorted {
        if lo >= hi || hi > depth {
            return Err(MorphError::RangeOutOfBounds { lo, hi, depth });
        }
    }
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[1][0] < w[0][1] {
            return Err(MorphError::OverlappingRanges(w[0][0], w[0][1], w[1][0], w[1][1]));
        }
    }
    Ok(sorted)
}

/// Deletes the listed transverse slices, keeping the remaining order. The
/// origin moves to the first retained slice.
pub fn trim_slices(v: &Volume, ranges: &[[usize; 2]]) -> Result<Volume, MorphError> {
    let shape = v.shape();
    let sorted = validate_ranges(ranges, shape.depth)?;
    if sorted.is_empty() {
        return Ok(v.clone());
    }
    let keep: Vec<usize> = (0..shape.depth)
        .filter(|&k| !sorted.iter().any(|&[lo, hi]| (lo..hi).contains(&k)))
        .collect();
    if keep.is_empty() {
        return Err(MorphError::EmptyVolume(shape.depth));
    }
    let plane = shape.height * shape.width;
    let pick = |k: usize| k * plane..(k + 1) * plane;
    let data = match v.data() {
        VoxelData::U16(d) => VoxelData::U16(keep.iter().flat_map(|&k| d[pick(k)].iter().copied()).collect()),
        VoxelData::I16(d) => VoxelData::I16(keep.iter().flat_map(|&k| d[pick(k)].iter().copied()).collect()),
        VoxelData::F32(d) => VoxelData::F32(keep.iter().flat_map(|&k| d[pick(k)].iter().copied()).collect()),
    };
    let g = v.geometry();
    let geometry = Geometry {
        origin: g.index_to_world(Vector3::new(0.0, 0.0, keep[0] as f64)),
        ..*g
    };
    let out_shape = Shape::new(keep.len(), shape.height, shape.width);
    Ok(Volume::new(out_shape, geometry, data, v.domain())
        .expect("trimmed grid is valid")
        .with_source_range(v.source_range()))
}
