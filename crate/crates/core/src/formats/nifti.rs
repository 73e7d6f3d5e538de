//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.
//!
//! Geometry is written through the sform only (`sform_code = 1`,
//! `qform_code = 0`). The reader falls back to the qform quaternion, then to
//! `pixdim`, when a file carries no sform.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::FormatError;
use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE_FILE: &[u8; 4] = b"n+1\0";

pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_UINT16: i16 = 512;

// The descrip field tags the intensity domain so Unit/Mask volumes survive a
// round trip.
const DESCRIP_PREFIX: &str = "voxelforge:";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

/// Fields of the fixed 348-byte header that this crate reads or writes.
#[derive(Clone, Debug, PartialEq)]
pub struct Nifti1Header {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub magic: [u8; 4],
}

impl Default for Nifti1Header {
    fn default() -> Self {
        Nifti1Header {
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: DT_FLOAT32,
            bitpix: 32,
            pixdim: [1.0; 8],
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            // mm + seconds
            xyzt_units: 2 | 8,
            cal_max: 0.0,
            cal_min: 0.0,
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 1,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [1.0, 0.0, 0.0, 0.0],
            srow_y: [0.0, 1.0, 0.0, 0.0],
            srow_z: [0.0, 0.0, 1.0, 0.0],
            magic: *MAGIC_SINGLE_FILE,
        }
    }
}

pub fn bitpix_of(datatype: i16) -> Option<i16> {
    match datatype {
        DT_INT16 | DT_UINT16 => Some(16),
        DT_FLOAT32 => Some(32),
        _ => None,
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        b
    }
    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(at)),
            Endian::Big => i16::from_be_bytes(self.bytes(at)),
        }
    }
    fn i32(&self, at: usize) -> i32 {
        match self.endian {
            Endian::Little => i32::from_le_bytes(self.bytes(at)),
            Endian::Big => i32::from_be_bytes(self.bytes(at)),
        }
    }
    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(at)),
            Endian::Big => f32::from_be_bytes(self.bytes(at)),
        }
    }
    fn f32s<const N: usize>(&self, at: usize) -> [f32; N] {
        std::array::from_fn(|n| self.f32(at + 4 * n))
    }
}

impl Nifti1Header {
    /// Little-endian 348-byte encoding.
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        let mut put = |at: usize, src: &[u8]| b[at..at + src.len()].copy_from_slice(src);
        put(0, &(HEADER_SIZE as i32).to_le_bytes());
        // regular = 'r'
        put(38, b"r");
        for (n, d) in self.dim.iter().enumerate() {
            put(40 + 2 * n, &d.to_le_bytes());
        }
        put(70, &self.datatype.to_le_bytes());
        put(72, &self.bitpix.to_le_bytes());
        for (n, p) in self.pixdim.iter().enumerate() {
            put(76 + 4 * n, &p.to_le_bytes());
        }
        put(108, &self.vox_offset.to_le_bytes());
        put(112, &self.scl_slope.to_le_bytes());
        put(116, &self.scl_inter.to_le_bytes());
        put(123, &[self.xyzt_units]);
        put(124, &self.cal_max.to_le_bytes());
        put(128, &self.cal_min.to_le_bytes());
        put(148, &self.descrip);
        put(252, &self.qform_code.to_le_bytes());
        put(254, &self.sform_code.to_le_bytes());
        for (n, q) in self.quatern.iter().chain(self.qoffset.iter()).enumerate() {
            put(256 + 4 * n, &q.to_le_bytes());
        }
        for (row, at) in [(&self.srow_x, 280), (&self.srow_y, 296), (&self.srow_z, 312)] {
            for (n, v) in row.iter().enumerate() {
                put(at + 4 * n, &v.to_le_bytes());
            }
        }
        put(344, &self.magic);
        b
    }

    /// Parses a header in either byte order, returning it with the detected
    /// order of the voxel payload.
    fn parse(buf: &[u8]) -> Result<(Self, Endian), FormatError> {
        if buf.len() < HEADER_SIZE {
            return Err(FormatError::Truncated {
                needed: HEADER_SIZE as u64,
                available: buf.len() as u64,
            });
        }
        let endian = if i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) == HEADER_SIZE as i32 {
            Endian::Little
        } else if i32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(FormatError::BadNiftiHeader("sizeof_hdr is not 348".into()));
        };
        let c = Cursor { buf, endian };
        let magic: [u8; 4] = c.bytes(344);
        if &magic != MAGIC_SINGLE_FILE {
            return Err(FormatError::BadNiftiHeader(format!(
                "unsupported magic {magic:?} (only single-file n+1 is supported)"
            )));
        }
        debug_assert_eq!(c.i32(0), HEADER_SIZE as i32);
        let header = Nifti1Header {
            dim: std::array::from_fn(|n| c.i16(40 + 2 * n)),
            datatype: c.i16(70),
            bitpix: c.i16(72),
            pixdim: c.f32s(76),
            vox_offset: c.f32(108),
            scl_slope: c.f32(112),
            scl_inter: c.f32(116),
            xyzt_units: buf[123],
            cal_max: c.f32(124),
            cal_min: c.f32(128),
            descrip: c.bytes(148),
            qform_code: c.i16(252),
            sform_code: c.i16(254),
            quatern: c.f32s(256),
            qoffset: c.f32s(268),
            srow_x: c.f32s(280),
            srow_y: c.f32s(296),
            srow_z: c.f32s(312),
            magic,
        };
        Ok((header, endian))
    }

    fn shape(&self) -> Result<Shape, FormatError> {
        let nd = self.dim[0];
        if !(3..=7).contains(&nd) {
            return Err(FormatError::BadNiftiHeader(format!("dim[0] = {nd}, expected 3D")));
        }
        if self.dim[4..=nd as usize].iter().any(|&d| d != 1) {
            return Err(FormatError::BadNiftiHeader("only 3D volumes are supported".into()));
        }
        let (x, y, z) = (self.dim[1], self.dim[2], self.dim[3]);
        if x <= 0 || y <= 0 || z <= 0 {
            return Err(FormatError::BadNiftiHeader(format!("non-positive dims {x}x{y}x{z}")));
        }
        Ok(Shape::new(z as usize, y as usize, x as usize))
    }

    fn geometry(&self) -> Geometry {
        let spacing = Vector3::new(
            self.pixdim[1].abs() as f64,
            self.pixdim[2].abs() as f64,
            self.pixdim[3].abs() as f64,
        );
        if self.sform_code > 0 {
            let rows = [self.srow_x, self.srow_y, self.srow_z];
            let m = Matrix3::from_fn(|r, col| rows[r][col] as f64);
            let origin = Vector3::new(rows[0][3] as f64, rows[1][3] as f64, rows[2][3] as f64);
            let spacing = Vector3::from_fn(|n, _| m.column(n).norm());
            let direction = Matrix3::from_fn(|r, col| m[(r, col)] / spacing[col]);
            return Geometry {
                spacing,
                origin,
                direction: orthonormalize(direction),
            };
        }
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|q| q as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let rot = UnitQuaternion::from_quaternion(Quaternion::new(a, b, c, d));
            let mut direction = rot.to_rotation_matrix().into_inner();
            if self.pixdim[0] < 0.0 {
                direction.column_mut(2).neg_mut();
            }
            return Geometry {
                spacing,
                origin: Vector3::from(self.qoffset.map(|q| q as f64)),
                direction,
            };
        }
        Geometry {
            spacing,
            ..Geometry::default()
        }
    }

    /// Domain tag written by [`header_for`] and whether the source range is
    /// stored in `cal_min`/`cal_max`.
    fn domain_tag(&self) -> Option<(IntensityDomain, bool)> {
        let end = self.descrip.iter().position(|&b| b == 0).unwrap_or(80);
        let text = std::str::from_utf8(&self.descrip[..end]).ok()?;
        let tag = text.strip_prefix(DESCRIP_PREFIX)?;
        let (name, ranged) = match tag.strip_suffix("+range") {
            Some(name) => (name, true),
            None => (tag, false),
        };
        let domain = match name {
            "unit" => IntensityDomain::Unit,
            "mask" => IntensityDomain::Mask,
            "real" => IntensityDomain::Real,
            "raw16" => IntensityDomain::Raw16,
            _ => return None,
        };
        Some((domain, ranged))
    }
}

// Direction recovered from f32 sform rows drifts by ~1e-7; re-project onto the
// nearest rotation so the volume invariant holds.
fn orthonormalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => m,
    }
}

fn domain_name(d: IntensityDomain) -> &'static str {
    match d {
        IntensityDomain::Raw16 => "raw16",
        IntensityDomain::Unit => "unit",
        IntensityDomain::Mask => "mask",
        IntensityDomain::Real => "real",
    }
}

pub fn header_for(v: &Volume) -> Nifti1Header {
    let s = v.shape();
    let g = v.geometry();
    let datatype = match v.data() {
        VoxelData::I16(_) => DT_INT16,
        VoxelData::U16(_) => DT_UINT16,
        VoxelData::F32(_) => DT_FLOAT32,
    };
    let affine = g.index_to_world_matrix();
    let row = |r: usize| {
        [
            affine[(r, 0)] as f32,
            affine[(r, 1)] as f32,
            affine[(r, 2)] as f32,
            g.origin[r] as f32,
        ]
    };
    let range = v.source_range();
    let mut descrip = [0u8; 80];
    let tag = format!(
        "{DESCRIP_PREFIX}{}{}",
        domain_name(v.domain()),
        if range.is_some() { "+range" } else { "" }
    );
    descrip[..tag.len()].copy_from_slice(tag.as_bytes());
    // Unit volumes also carry their source range as the standard scaling
    // pair, so any reader applying scl_slope/scl_inter sees raw intensities.
    let (scl_slope, scl_inter) = match (v.domain(), range) {
        (IntensityDomain::Unit, Some((lo, hi))) if hi > lo => ((hi - lo) as f32, lo as f32),
        _ => (1.0, 0.0),
    };
    let (cal_min, cal_max) = range.map_or((0.0, 0.0), |(lo, hi)| (lo as f32, hi as f32));
    Nifti1Header {
        dim: [3, s.width as i16, s.height as i16, s.depth as i16, 1, 1, 1, 1],
        datatype,
        bitpix: bitpix_of(datatype).expect("supported datatype"),
        pixdim: [
            1.0,
            g.spacing.x as f32,
            g.spacing.y as f32,
            g.spacing.z as f32,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        scl_slope,
        scl_inter,
        cal_max,
        cal_min,
        descrip,
        srow_x: row(0),
        srow_y: row(1),
        srow_z: row(2),
        ..Nifti1Header::default()
    }
}

/// Uncompressed single-file encoding: header, 4 zero extension bytes, voxels.
pub fn to_bytes(v: &Volume) -> Result<Vec<u8>, FormatError> {
    let s = v.shape();
    if [s.depth, s.height, s.width].iter().any(|&d| d > i16::MAX as usize) {
        return Err(FormatError::BadNiftiHeader(format!("extent {s} exceeds NIfTI-1 limits")));
    }
    let header = header_for(v);
    let mut out = Vec::with_capacity(VOX_OFFSET + v.len() * 4);
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&[0u8; 4]);
    match v.data() {
        VoxelData::U16(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::I16(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::F32(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<Volume, FormatError> {
    if buf.starts_with(&[0x1f, 0x8b]) {
        let mut plain = Vec::new();
        GzDecoder::new(buf).read_to_end(&mut plain)?;
        return from_bytes(&plain);
    }
    let (h, endian) = Nifti1Header::parse(buf)?;
    let expected_bitpix = bitpix_of(h.datatype).ok_or(FormatError::UnsupportedDatatype(h.datatype))?;
    if h.bitpix != expected_bitpix {
        return Err(FormatError::BadNiftiHeader(format!(
            "bitpix {} inconsistent with datatype {}",
            h.bitpix, h.datatype
        )));
    }
    let shape = h.shape()?;
    let offset = h.vox_offset;
    if !(offset >= HEADER_SIZE as f32) || offset.fract() != 0.0 {
        return Err(FormatError::BadNiftiHeader(format!("invalid vox_offset {offset}")));
    }
    let offset = offset as usize;
    let elem = (expected_bitpix / 8) as usize;
    let needed = shape
        .len()
        .checked_mul(elem)
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| FormatError::BadNiftiHeader("declared size overflows".into()))?;
    if buf.len() < needed {
        return Err(FormatError::Truncated {
            needed: needed as u64,
            available: buf.len() as u64,
        });
    }
    let payload = &buf[offset..needed];
    let big = endian == Endian::Big;
    let data = match h.datatype {
        DT_UINT16 => super::mhd::decode_voxels(payload, super::mhd::MetElementType::UShort, big, shape.len())?,
        DT_INT16 => super::mhd::decode_voxels(payload, super::mhd::MetElementType::Short, big, shape.len())?,
        _ => super::mhd::decode_voxels(payload, super::mhd::MetElementType::Float, big, shape.len())?,
    };
    let (domain, ranged) = h.domain_tag().unwrap_or(match data {
        VoxelData::F32(_) => (IntensityDomain::Real, false),
        _ => (IntensityDomain::Raw16, false),
    });
    let source_range = ranged.then_some((h.cal_min as f64, h.cal_max as f64));
    Ok(Volume::new(shape, h.geometry(), data, domain)?.with_source_range(source_range))
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = to_bytes(v)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path)?;
        // mtime 0 keeps compressed output byte-identical across runs
        let mut enc: GzEncoder<fs::File> = GzBuilder::new().mtime(0).write(file, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume, FormatError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(data: VoxelData, domain: IntensityDomain) -> Volume {
        Volume::new(Shape::new(2, 3, 4), Geometry::with_spacing([0.5, 1.25, 3.0]), data, domain).unwrap()
    }

    #[test]
    fn header_prefix_bytes() {
        let v = vol(VoxelData::F32(vec![0.0; 24]), IntensityDomain::Real);
        let b = to_bytes(&v).unwrap();
        assert_eq!(&b[0..4], &[0x5C, 0x01, 0x00, 0x00]);
        assert_eq!(&b[344..348], b"n+1\0");
        assert_eq!(&b[348..352], &[0, 0, 0, 0]);
        assert_eq!(b.len(), VOX_OFFSET + 24 * 4);
        assert_eq!(f32::from_le_bytes(b[108..112].try_into().unwrap()), 352.0);
        assert_eq!(i16::from_le_bytes([b[252], b[253]]), 0);
        assert_eq!(i16::from_le_bytes([b[254], b[255]]), 1);
    }

    #[test]
    fn datatype_codes() {
        let u = to_bytes(&vol(VoxelData::U16(vec![7; 24]), IntensityDomain::Raw16)).unwrap();
        assert_eq!(i16::from_le_bytes([u[70], u[71]]), 512);
        let s = to_bytes(&vol(VoxelData::I16(vec![-7; 24]), IntensityDomain::Raw16)).unwrap();
        assert_eq!(i16::from_le_bytes([s[70], s[71]]), 4);
        assert_eq!(i16::from_le_bytes([s[72], s[73]]), 16);
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut b = to_bytes(&vol(VoxelData::U16(vec![1; 24]), IntensityDomain::Raw16)).unwrap();
        b[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(FormatError::UnsupportedDatatype(64))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let b = to_bytes(&vol(VoxelData::U16(vec![1; 24]), IntensityDomain::Raw16)).unwrap();
        for cut in [0, 100, 347, 351, b.len() - 1] {
            assert!(from_bytes(&b[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn unit_source_range_survives() {
        let v = vol(VoxelData::F32(vec![0.25; 24]), IntensityDomain::Unit).with_source_range(Some((-1024.0, 3071.0)));
        let back = from_bytes(&to_bytes(&v).unwrap()).unwrap();
        assert_eq!(back.domain(), IntensityDomain::Unit);
        assert_eq!(back.source_range(), Some((-1024.0, 3071.0)));
    }

    #[test]
    fn big_endian_file_reads() {
        let v = vol(
            VoxelData::I16((0..24).map(|x| x * 100 - 1000).collect()),
            IntensityDomain::Raw16,
        );
        let le = to_bytes(&v).unwrap();
        // byte-swap every multi-byte header field we use plus the payload
        let mut be = le.clone();
        let swap = |b: &mut [u8], at: usize, n: usize| b[at..at + n].reverse();
        swap(&mut be, 0, 4);
        for n in 0..8 {
            swap(&mut be, 40 + 2 * n, 2);
            swap(&mut be, 76 + 4 * n, 4);
        }
        for at in [70, 72, 252, 254] {
            swap(&mut be, at, 2);
        }
        for at in (108..=116).step_by(4).chain((256..344).step_by(4)) {
            swap(&mut be, at, 4);
        }
        for n in 0..24 {
            swap(&mut be, VOX_OFFSET + 2 * n, 2);
        }
        let back = from_bytes(&be).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(back.shape(), v.shape());
    }

    #[test]
    fn qform_fallback() {
        let v = vol(VoxelData::F32(vec![0.0; 24]), IntensityDomain::Real);
        let mut h = header_for(&v);
        h.sform_code = 0;
        h.qform_code = 1;
        // 90 degrees about z: (a, b, c, d) = (cos45, 0, 0, sin45)
        h.quatern = [0.0, 0.0, std::f32::consts::FRAC_1_SQRT_2];
        h.qoffset = [1.0, 2.0, 3.0];
        let g = h.geometry();
        assert!(
            (g.direction - Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0))
                .abs()
                .max()
                < 1e-6
        );
        assert_eq!(g.origin, Vector3::new(1.0, 2.0, 3.0));
    }
}
