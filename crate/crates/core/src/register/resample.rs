use nalgebra::{Matrix3, Vector3};

use super::RigidTransform;
use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

// Continuous indices this far outside the grid still count as inside; absorbs
// round-off on the boundary planes.
const EDGE_EPS: f64 = 1e-6;

/// Dense f32 copy of a volume for repeated trilinear lookups.
#[derive(Clone, Debug)]
pub struct Interpolator {
    shape: Shape,
    voxels: Vec<f32>,
}

impl Interpolator {
    pub fn new(shape: Shape, voxels: Vec<f32>) -> Self {
        assert_eq!(shape.len(), voxels.len());
        Interpolator { shape, voxels }
    }

    pub fn from_volume(v: &Volume) -> Self {
        Interpolator::new(v.shape(), v.to_f32_vec())
    }

    /// Trilinear value at continuous index `(x, y, z)` = `(i, j, k)`, or
    /// `None` outside the grid.
    #[inline]
    pub fn sample(&self, x: f64, y: f64, z: f64) -> Option<f64> {
        let (ix, fx) = axis(x, self.shape.width)?;
        let (iy, fy) = axis(y, self.shape.height)?;
        let (iz, fz) = axis(z, self.shape.depth)?;
        let w = self.shape.width;
        let hw = self.shape.height * w;
        let dx = usize::from(self.shape.width > 1);
        let dy = if self.shape.height > 1 { w } else { 0 };
        let dz = if self.shape.depth > 1 { hw } else { 0 };
        let base = iz * hw + iy * w + ix;
        let v = &self.voxels;
        let c00 = v[base] as f64 * (1.0 - fx) + v[base + dx] as f64 * fx;
        let c10 = v[base + dy] as f64 * (1.0 - fx) + v[base + dy + dx] as f64 * fx;
        let c01 = v[base + dz] as f64 * (1.0 - fx) + v[base + dz + dx] as f64 * fx;
        let c11 = v[base + dz + dy] as f64 * (1.0 - fx) + v[base + dz + dy + dx] as f64 * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        Some(c0 * (1.0 - fz) + c1 * fz)
    }
}

#[inline]
fn axis(x: f64, n: usize) -> Option<(usize, f64)> {
    let hi = (n - 1) as f64;
    if !(x >= -EDGE_EPS && x <= hi + EDGE_EPS) {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let x = x.clamp(0.0, hi);
    let i0 = (x.floor() as usize).min(n - 2);
    Some((i0, x - i0 as f64))
}

/// Affine map from reference-grid indices `(i, j, k)` to continuous indices
/// of the moving grid under a rigid transform.
#[derive(Clone, Copy, Debug)]
pub struct IndexMap {
    pub matrix: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

impl IndexMap {
    pub fn new(reference: &Geometry, t: &RigidTransform, moving: &Geometry) -> Self {
        let (r, b) = t.affine();
        let to_moving = moving.index_to_world_matrix().try_inverse().expect("valid geometry");
        IndexMap {
            matrix: to_moving * r * reference.index_to_world_matrix(),
            offset: to_moving * (r * reference.origin + b - moving.origin),
        }
    }

    #[inline]
    pub fn map(&self, i: f64, j: f64, k: f64) -> Vector3<f64> {
        self.matrix * Vector3::new(i, j, k) + self.offset
    }
}

/// Moving volume sampled on the reference grid: each output voxel is the
/// trilinear value of `moving` at `t(world point)`, 0 outside `moving`.
pub fn resample(moving: &Volume, t: &RigidTransform, reference: &Volume) -> Volume {
    resample_to(moving, t, reference.shape(), reference.geometry())
}

pub fn resample_to(moving: &Volume, t: &RigidTransform, shape: Shape, geometry: &Geometry) -> Volume {
    let interp = Interpolator::from_volume(moving);
    let map = IndexMap::new(geometry, t, moving.geometry());
    let mut out = vec![0.0f32; shape.len()];
    let col_i = map.matrix.column(0).into_owned();
    for k in 0..shape.depth {
        for j in 0..shape.height {
            let row = shape.index(k, j, 0);
            let mut u = map.map(0.0, j as f64, k as f64);
            for slot in &mut out[row..row + shape.width] {
                if let Some(v) = interp.sample(u.x, u.y, u.z) {
                    *slot = v as f32;
                }
                u += col_i;
            }
        }
    }
    let domain = match moving.domain() {
        // convex combinations of [0,1] values and 0 stay in [0,1]
        IntensityDomain::Unit => IntensityDomain::Unit,
        _ => IntensityDomain::Real,
    };
    let out = if domain == IntensityDomain::Unit {
        out.into_iter().map(|x| x.clamp(0.0, 1.0)).collect()
    } else {
        out
    };
    Volume::new(shape, *geometry, VoxelData::F32(out), domain)
        .expect("reference grid is valid")
        .with_source_range(moving.source_range())
}

/// 2× mean downsampling. Odd extents keep a final partial block.
pub fn downsample2(v: &Volume) -> Volume {
    let s = v.shape();
    let half = |n: usize| n.div_ceil(2);
    let out_shape = Shape::new(half(s.depth), half(s.height), half(s.width));
    let src = v.to_f32_vec();
    let mut out = vec![0.0f32; out_shape.len()];
    for k in 0..out_shape.depth {
        for j in 0..out_shape.height {
            for i in 0..out_shape.width {
                let mut sum = 0.0f64;
                let mut n = 0u32;
                for kk in 2 * k..(2 * k + 2).min(s.depth) {
                    for jj in 2 * j..(2 * j + 2).min(s.height) {
                        for ii in 2 * i..(2 * i + 2).min(s.width) {
                            sum += src[s.index(kk, jj, ii)] as f64;
                            n += 1;
                        }
                    }
                }
                out[out_shape.index(k, j, i)] = (sum / n as f64) as f32;
            }
        }
    }
    let g = v.geometry();
    let geometry = Geometry {
        spacing: g.spacing * 2.0,
        origin: g.index_to_world(Vector3::new(0.5, 0.5, 0.5)),
        direction: g.direction,
    };
    let domain = match v.domain() {
        IntensityDomain::Unit => IntensityDomain::Unit,
        _ => IntensityDomain::Real,
    };
    Volume::new(out_shape, geometry, VoxelData::F32(out), domain)
        .expect("downsampled grid is valid")
        .with_source_range(v.source_range())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume {
        let s = Shape::new(6, 7, 8);
        let voxels = (0..s.len())
            .map(|idx| {
                let (k, j, i) = s.unravel(idx);
                (k * 100 + j * 10 + i) as f32
            })
            .collect();
        Volume::from_f32(s, Geometry::with_spacing([1.0, 2.0, 3.0]), voxels, IntensityDomain::Real).unwrap()
    }

    #[test]
    fn identity_is_copy() {
        let v = ramp();
        let out = resample(&v, &RigidTransform::default(), &v);
        assert_eq!(out.to_f32_vec(), v.to_f32_vec());
    }

    #[test]
    fn one_voxel_shift() {
        let v = ramp();
        // sample one voxel further along y (spacing 2mm)
        let t = RigidTransform::new([0.0; 3], [0.0, 2.0, 0.0], [0.0; 3]);
        let out = resample(&v, &t, &v);
        let s = v.shape();
        for k in 0..s.depth {
            for j in 0..s.height {
                for i in 0..s.width {
                    let expect = if j + 1 < s.height { v.get(k, j + 1, i) } else { 0.0 };
                    assert_eq!(out.get(k, j, i), expect);
                }
            }
        }
    }

    #[test]
    fn linear_field_is_exact_between_voxels() {
        let v = ramp();
        let interp = Interpolator::from_volume(&v);
        let got = interp.sample(2.25, 3.5, 1.75).unwrap();
        assert!((got - (1.75 * 100.0 + 3.5 * 10.0 + 2.25)).abs() < 1e-9);
        assert!(interp.sample(-0.1, 0.0, 0.0).is_none());
        assert!(interp.sample(7.0, 6.0, 5.0).is_some());
        assert!(interp.sample(7.01, 6.0, 5.0).is_none());
    }

    #[test]
    fn downsample_geometry_is_block_center() {
        let v = ramp();
        let d = downsample2(&v);
        assert_eq!(d.shape(), Shape::new(3, 4, 4));
        let expect = v.geometry().index_to_world(Vector3::new(0.5, 0.5, 0.5));
        assert!((d.geometry().origin - expect).norm() < 1e-12);
        // mean of the first 2x2x2 block of the ramp
        assert!((d.get(0, 0, 0) - 55.5).abs() < 1e-6);
    }
}
