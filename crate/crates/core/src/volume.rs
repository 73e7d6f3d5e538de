//! Volume representation, min-max normalization and transverse pad/crop.
//!
//! Voxels are stored depth-major: the linear index of voxel `(k, j, i)`
//! (depth, height, width) is `(k * height + j) * width + i`. World geometry
//! follows the MetaImage/ITK convention where the index vector is ordered
//! `(i, j, k)`, i.e. x runs along the width axis and z along depth:
//!
//! ```text
//! world = origin + direction * (spacing ⊙ (i, j, k))
//! ```

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest raw 16-bit intensity, the PSNR ceiling for raw-scale CT.
pub const RAW16_MAX: f64 = 65535.0;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("voxel count {actual} does not match shape {shape} ({expected} voxels)")]
    VoxelCount { shape: Shape, expected: usize, actual: usize },
    #[error("empty volume (shape {0})")]
    Empty(Shape),
    #[error("spacing must be strictly positive, got {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("direction matrix is not orthonormal")]
    NonOrthonormalDirection,
    #[error("value {value} at voxel {index} violates the {domain:?} domain")]
    DomainViolation {
        domain: IntensityDomain,
        index: usize,
        value: f64,
    },
    #[error("{domain:?} volumes cannot hold {storage} voxels")]
    StorageMismatch { domain: IntensityDomain, storage: &'static str },
    #[error("target extents must be positive, got {0}x{1}")]
    InvalidTarget(usize, usize),
}

/// Extent in voxels, ordered (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Shape { depth, height, width }
    }

    pub const fn cube(n: usize) -> Self {
        Shape::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extents as `[depth, height, width]`.
    pub const fn dims(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    #[inline]
    pub const fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.height + j) * self.width + i
    }

    #[inline]
    pub const fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.width;
        let rest = idx / self.width;
        (rest / self.height, rest % self.height, i)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.depth, self.height, self.width)
    }
}

/// Physical placement of the voxel grid. Vectors are in (x, y, z) order, so
/// `spacing[0]` is the width-axis spacing and `spacing[2]` the slice spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub spacing: Vector3<f64>,
    pub origin: Vector3<f64>,
    pub direction: Matrix3<f64>,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            spacing: Vector3::new(1.0, 1.0, 1.0),
            origin: Vector3::zeros(),
            direction: Matrix3::identity(),
        }
    }
}

impl Geometry {
    pub fn with_spacing(spacing: [f64; 3]) -> Self {
        Geometry {
            spacing: Vector3::from(spacing),
            ..Geometry::default()
        }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::NonPositiveSpacing([
                self.spacing.x,
                self.spacing.y,
                self.spacing.z,
            ]));
        }
        let gram = self.direction.transpose() * self.direction;
        let off = (gram - Matrix3::identity()).abs().max();
        if !(off < ORTHONORMAL_TOL) {
            return Err(VolumeError::NonOrthonormalDirection);
        }
        Ok(())
    }

    /// World position of a continuous index given in (i, j, k) order.
    #[inline]
    pub fn index_to_world(&self, ijk: Vector3<f64>) -> Vector3<f64> {
        self.origin + self.direction * ijk.component_mul(&self.spacing)
    }

    /// Continuous (i, j, k) index of a world point.
    #[inline]
    pub fn world_to_index(&self, p: Vector3<f64>) -> Vector3<f64> {
        (self.direction.transpose() * (p - self.origin)).component_div(&self.spacing)
    }

    /// Linear map from index space to world space (`direction * diag(spacing)`).
    pub fn index_to_world_matrix(&self) -> Matrix3<f64> {
        self.direction * Matrix3::from_diagonal(&self.spacing)
    }

    /// World center of a grid of the given shape.
    pub fn center(&self, shape: Shape) -> Vector3<f64> {
        let mid = Vector3::new(
            (shape.width as f64 - 1.0) / 2.0,
            (shape.height as f64 - 1.0) / 2.0,
            (shape.depth as f64 - 1.0) / 2.0,
        );
        self.index_to_world(mid)
    }
}

/// Meaning of the stored intensities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityDomain {
    /// Raw 16-bit scanner integers (stored as `u16`, or `i16` for signed CT).
    Raw16,
    /// Min-max normalized reals in `[0, 1]`.
    Unit,
    /// Binary masks with values in `{0, 1}`.
    Mask,
    /// Unconstrained floating-point intensities (resampled or float input).
    Real,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    U16(Vec<u16>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U16(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        match self {
            VoxelData::U16(v) => v[idx] as f64,
            VoxelData::I16(v) => v[idx] as f64,
            VoxelData::F32(v) => v[idx] as f64,
        }
    }

    pub fn storage_name(&self) -> &'static str {
        match self {
            VoxelData::U16(_) => "u16",
            VoxelData::I16(_) => "i16",
            VoxelData::F32(_) => "f32",
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match self {
            VoxelData::U16(v) => v.iter().map(|&x| x as f32).collect(),
            VoxelData::I16(v) => v.iter().map(|&x| x as f32).collect(),
            VoxelData::F32(v) => v.clone(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    /// Minimum and maximum as f64, `None` when empty.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in 0..self.len() {
            let x = self.get(idx);
            lo = lo.min(x);
            hi = hi.max(x);
        }
        Some((lo, hi))
    }

    fn empty_like(&self, len: usize) -> VoxelData {
        match self {
            VoxelData::U16(_) => VoxelData::U16(vec![0; len]),
            VoxelData::I16(_) => VoxelData::I16(vec![0; len]),
            VoxelData::F32(_) => VoxelData::F32(vec![0.0; len]),
        }
    }

    fn copy_from(&mut self, dst: usize, src: &VoxelData, src_idx: usize) {
        match (self, src) {
            (VoxelData::U16(d), VoxelData::U16(s)) => d[dst] = s[src_idx],
            (VoxelData::I16(d), VoxelData::I16(s)) => d[dst] = s[src_idx],
            (VoxelData::F32(d), VoxelData::F32(s)) => d[dst] = s[src_idx],
            _ => unreachable!("storage kinds always match within a volume copy"),
        }
    }
}

/// 3D scalar grid with world geometry.
///
/// Volumes are immutable after construction; every operation returns a new
/// volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: Shape,
    geometry: Geometry,
    data: VoxelData,
    domain: IntensityDomain,
    source_range: Option<(f64, f64)>,
}

impl Volume {
    pub fn new(shape: Shape, geometry: Geometry, data: VoxelData, domain: IntensityDomain) -> Result<Self, VolumeError> {
        if shape.is_empty() {
            return Err(VolumeError::Empty(shape));
        }
        if data.len() != shape.len() {
            return Err(VolumeError::VoxelCount {
                shape,
                expected: shape.len(),
                actual: data.len(),
            });
        }
        geometry.validate()?;
        check_domain(&data, domain)?;
        Ok(Volume {
            shape,
            geometry,
            data,
            domain,
            source_range: None,
        })
    }

    pub fn from_f32(shape: Shape, geometry: Geometry, voxels: Vec<f32>, domain: IntensityDomain) -> Result<Self, VolumeError> {
        Volume::new(shape, geometry, VoxelData::F32(voxels), domain)
    }

    /// Attach the intensity range the voxels were normalized from, so that
    /// Unit volumes can be mapped back to raw scale.
    pub fn with_source_range(mut self, range: Option<(f64, f64)>) -> Self {
        self.source_range = range;
        self
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Result<Self, VolumeError> {
        geometry.validate()?;
        self.geometry = geometry;
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn into_data(self) -> VoxelData {
        self.data
    }

    pub fn domain(&self) -> IntensityDomain {
        self.domain
    }

    pub fn source_range(&self) -> Option<(f64, f64)> {
        self.source_range
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize, i: usize) -> f64 {
        self.data.get(self.shape.index(k, j, i))
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.to_f32_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.to_f64_vec()
    }

    /// World position of voxel `(k, j, i)`.
    pub fn world_of(&self, k: usize, j: usize, i: usize) -> Vector3<f64> {
        self.geometry.index_to_world(Vector3::new(i as f64, j as f64, k as f64))
    }

    /// Voxels mapped back to the intensity scale they were normalized from.
    /// Volumes without a recorded source range are returned unchanged.
    pub fn raw_scale_values(&self) -> Vec<f64> {
        match (self.domain, self.source_range) {
            (IntensityDomain::Unit, Some((lo, hi))) => (0..self.len()).map(|idx| lo + self.data.get(idx) * (hi - lo)).collect(),
            _ => self.to_f64_vec(),
        }
    }

    /// Same grid and geometry, different voxels.
    pub fn with_voxels(&self, data: VoxelData, domain: IntensityDomain) -> Result<Self, VolumeError> {
        let mut v = Volume::new(self.shape, self.geometry, data, domain)?;
        v.source_range = self.source_range;
        Ok(v)
    }
}

fn check_domain(data: &VoxelData, domain: IntensityDomain) -> Result<(), VolumeError> {
    let violation = |index: usize, value: f64| VolumeError::DomainViolation { domain, index, value };
    match (domain, data) {
        (IntensityDomain::Raw16, VoxelData::U16(_) | VoxelData::I16(_)) => Ok(()),
        (IntensityDomain::Raw16, VoxelData::F32(_)) => Err(VolumeError::StorageMismatch { domain, storage: "f32" }),
        (IntensityDomain::Unit, VoxelData::F32(v)) => match v.iter().position(|x| !(0.0..=1.0).contains(x)) {
            Some(idx) => Err(violation(idx, v[idx] as f64)),
            None => Ok(()),
        },
        (IntensityDomain::Mask, VoxelData::F32(v)) => match v.iter().position(|&x| x != 0.0 && x != 1.0) {
            Some(idx) => Err(violation(idx, v[idx] as f64)),
            None => Ok(()),
        },
        (IntensityDomain::Real, VoxelData::F32(v)) => match v.iter().position(|x| !x.is_finite()) {
            Some(idx) => Err(violation(idx, v[idx] as f64)),
            None => Ok(()),
        },
        (_, other) => Err(VolumeError::StorageMismatch {
            domain,
            storage: other.storage_name(),
        }),
    }
}

/// `(x - min) / (max - min)` elementwise. A constant volume maps to zeros.
/// The original `(min, max)` is recorded as the output's source range.
pub fn minmax_normalize(v: &Volume) -> Volume {
    let (lo, hi) = v.data.min_max().expect("volumes are never empty");
    let range = hi - lo;
    let voxels: Vec<f32> = if range > 0.0 {
        (0..v.len()).map(|idx| ((v.data.get(idx) - lo) / range) as f32).collect()
    } else {
        vec![0.0; v.len()]
    };
    Volume {
        shape: v.shape,
        geometry: v.geometry,
        data: VoxelData::F32(voxels),
        domain: IntensityDomain::Unit,
        source_range: Some((lo, hi)),
    }
}

/// Per-axis pad and crop counts for one transverse resize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AxisPlan {
    pub low_pad: usize,
    pub high_pad: usize,
    pub low_crop: usize,
    pub high_crop: usize,
}

impl AxisPlan {
    /// Centered plan taking `from` voxels to `to`; the odd voxel goes high.
    pub fn centered(from: usize, to: usize) -> Self {
        if to >= from {
            let diff = to - from;
            AxisPlan {
                low_pad: diff / 2,
                high_pad: diff - diff / 2,
                ..AxisPlan::default()
            }
        } else {
            let diff = from - to;
            AxisPlan {
                low_crop: diff / 2,
                high_crop: diff - diff / 2,
                ..AxisPlan::default()
            }
        }
    }

    pub fn output_len(&self, from: usize) -> usize {
        from + self.low_pad + self.high_pad - self.low_crop - self.high_crop
    }

    /// Source index for an output index, `None` inside the padding.
    #[inline]
    fn source(&self, out: usize, from: usize) -> Option<usize> {
        let shifted = out as isize - self.low_pad as isize + self.low_crop as isize;
        (shifted >= 0 && (shifted as usize) < from).then_some(shifted as usize)
    }

    /// Signed index offset of the new origin relative to the old one.
    fn origin_shift(&self) -> f64 {
        self.low_crop as f64 - self.low_pad as f64
    }
}

/// Pad/crop plan for the (height, width) axes. Depth is never touched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropPadPlan {
    pub height: AxisPlan,
    pub width: AxisPlan,
}

impl CropPadPlan {
    pub fn new(shape: Shape, target_hw: (usize, usize)) -> Result<Self, VolumeError> {
        let (th, tw) = target_hw;
        if th == 0 || tw == 0 {
            return Err(VolumeError::InvalidTarget(th, tw));
        }
        Ok(CropPadPlan {
            height: AxisPlan::centered(shape.height, th),
            width: AxisPlan::centered(shape.width, tw),
        })
    }

    pub fn output_shape(&self, shape: Shape) -> Shape {
        Shape::new(
            shape.depth,
            self.height.output_len(shape.height),
            self.width.output_len(shape.width),
        )
    }

    pub fn apply(&self, v: &Volume) -> Volume {
        let src = v.shape;
        let out_shape = self.output_shape(src);
        let mut data = v.data.empty_like(out_shape.len());
        for k in 0..out_shape.depth {
            for j in 0..out_shape.height {
                let Some(sj) = self.height.source(j, src.height) else {
                    continue;
                };
                for i in 0..out_shape.width {
                    if let Some(si) = self.width.source(i, src.width) {
                        data.copy_from(out_shape.index(k, j, i), &v.data, src.index(k, sj, si));
                    }
                }
            }
        }
        let shift = Vector3::new(self.width.origin_shift(), self.height.origin_shift(), 0.0);
        let geometry = Geometry {
            origin: v.geometry.index_to_world(shift),
            ..v.geometry
        };
        Volume {
            shape: out_shape,
            geometry,
            data,
            domain: v.domain,
            source_range: v.source_range,
        }
    }
}

/// Center-pad (with 0) or center-crop the transverse plane to `target_hw`,
/// keeping every retained voxel at its world position.
pub fn pad_or_crop(v: &Volume, target_hw: (usize, usize)) -> Result<Volume, VolumeError> {
    Ok(CropPadPlan::new(v.shape, target_hw)?.apply(v))
}
