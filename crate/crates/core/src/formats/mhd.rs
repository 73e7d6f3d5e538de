//! MetaImage (`.mhd` + raw, or `.mha` with `ElementDataFile = LOCAL`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::FormatError;
use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetElementType {
    Short,
    UShort,
    Float,
}

impl MetElementType {
    pub fn parse(s: &str) -> Result<Self, FormatError> {
        match s {
            "MET_SHORT" => Ok(MetElementType::Short),
            "MET_USHORT" => Ok(MetElementType::UShort),
            "MET_FLOAT" => Ok(MetElementType::Float),
            other => Err(FormatError::UnsupportedElementType(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetElementType::Short => "MET_SHORT",
            MetElementType::UShort => "MET_USHORT",
            MetElementType::Float => "MET_FLOAT",
        }
    }

    pub fn size(self) -> usize {
        match self {
            MetElementType::Short | MetElementType::UShort => 2,
            MetElementType::Float => 4,
        }
    }

    pub fn of(data: &VoxelData) -> Self {
        match data {
            VoxelData::U16(_) => MetElementType::UShort,
            VoxelData::I16(_) => MetElementType::Short,
            VoxelData::F32(_) => MetElementType::Float,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ElementDataFile {
    Local,
    File(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhdHeader {
    pub ndims: usize,
    /// Extents in file order (x, y, z).
    pub dim_size: [usize; 3],
    pub element_type: MetElementType,
    pub element_spacing: [f64; 3],
    pub offset: [f64; 3],
    /// Direction cosines, one axis after another (column-major direction).
    pub transform_matrix: [f64; 9],
    pub byte_order_msb: bool,
    pub element_data_file: ElementDataFile,
}

impl MhdHeader {
    pub fn shape(&self) -> Shape {
        Shape::new(self.dim_size[2], self.dim_size[1], self.dim_size[0])
    }

    pub fn geometry(&self) -> Geometry {
        let t = &self.transform_matrix;
        Geometry {
            spacing: Vector3::from(self.element_spacing),
            origin: Vector3::from(self.offset),
            direction: Matrix3::from_column_slice(t),
        }
    }
}

// Keys ITK and the RIRE distribution write that carry no information we use.
const PASSTHROUGH_KEYS: &[&str] = &[
    "ObjectType",
    "BinaryData",
    "CompressedData",
    "CenterOfRotation",
    "AnatomicalOrientation",
    "Comment",
    "ElementNumberOfChannels",
];

fn malformed(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::MalformedHeader {
        line,
        message: msg.into(),
    }
}

fn parse_numbers<T: std::str::FromStr>(line: usize, key: &str, value: &str, arity: usize) -> Result<Vec<T>, FormatError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != arity {
        return Err(malformed(line, format!("{key} expects {arity} values, got {}", parts.len())));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| malformed(line, format!("{key}: cannot parse {p:?}")))
        })
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, FormatError> {
    match value {
        "True" | "true" | "1" => Ok(true),
        "False" | "false" | "0" => Ok(false),
        other => Err(malformed(line, format!("{key}: expected True/False, got {other:?}"))),
    }
}

/// Parses header text. Returns the header and, for `LOCAL` data, the byte
/// offset right after the `ElementDataFile` line.
pub fn parse_header(bytes: &[u8]) -> Result<(MhdHeader, usize), FormatError> {
    let mut ndims = None;
    let mut dim_size = None;
    let mut element_type = None;
    let mut spacing = [1.0; 3];
    let mut offset = [0.0; 3];
    let mut transform = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut msb = false;
    let mut data_file = None;

    let mut pos = 0usize;
    let mut line_no = 0usize;
    while pos < bytes.len() && data_file.is_none() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
        let raw = &bytes[pos..end];
        pos = (end + 1).min(bytes.len());
        line_no += 1;
        let text = std::str::from_utf8(raw)
            .map_err(|_| malformed(line_no, "header line is not UTF-8"))?
            .trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| malformed(line_no, format!("expected `Key = Value`, got {text:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => {
                let n: usize = parse_numbers(line_no, key, value, 1)?[0];
                if n != 3 {
                    return Err(malformed(line_no, format!("only 3D images are supported, NDims = {n}")));
                }
                ndims = Some(n);
            }
            "DimSize" => {
                let d: Vec<usize> = parse_numbers(line_no, key, value, 3)?;
                if d.contains(&0) {
                    return Err(malformed(line_no, "DimSize must be positive"));
                }
                dim_size = Some([d[0], d[1], d[2]]);
            }
            "ElementType" => element_type = Some(MetElementType::parse(value)?),
            "ElementSpacing" | "ElementSize" => {
                let s: Vec<f64> = parse_numbers(line_no, key, value, 3)?;
                spacing = [s[0], s[1], s[2]];
            }
            "Offset" | "Origin" | "Position" => {
                let o: Vec<f64> = parse_numbers(line_no, key, value, 3)?;
                offset = [o[0], o[1], o[2]];
            }
            "TransformMatrix" | "Rotation" | "Orientation" => {
                let t: Vec<f64> = parse_numbers(line_no, key, value, 9)?;
                transform.copy_from_slice(&t);
            }
            "ElementByteOrderMSB" | "BinaryDataByteOrderMSB" => msb = parse_bool(line_no, key, value)?,
            "CompressedData" => {
                if parse_bool(line_no, key, value)? {
                    return Err(malformed(line_no, "compressed MetaImage data is not supported"));
                }
            }
            "ElementNumberOfChannels" => {
                let c: usize = parse_numbers(line_no, key, value, 1)?[0];
                if c != 1 {
                    return Err(malformed(line_no, "only single-channel images are supported"));
                }
            }
            "ElementDataFile" => {
                data_file = Some(if value == "LOCAL" {
                    ElementDataFile::Local
                } else if value.is_empty() {
                    return Err(malformed(line_no, "ElementDataFile is empty"));
                } else {
                    ElementDataFile::File(value.to_string())
                });
            }
            k if PASSTHROUGH_KEYS.contains(&k) => {}
            other => return Err(malformed(line_no, format!("unknown key {other:?}"))),
        }
    }

    let missing = |k: &str| malformed(line_no, format!("missing required key {k}"));
    let header = MhdHeader {
        ndims: ndims.ok_or_else(|| missing("NDims"))?,
        dim_size: dim_size.ok_or_else(|| missing("DimSize"))?,
        element_type: element_type.ok_or_else(|| missing("ElementType"))?,
        element_spacing: spacing,
        offset,
        transform_matrix: transform,
        byte_order_msb: msb,
        element_data_file: data_file.ok_or_else(|| missing("ElementDataFile"))?,
    };
    Ok((header, pos))
}

pub fn decode_voxels(bytes: &[u8], element_type: MetElementType, msb: bool, count: usize) -> Result<VoxelData, FormatError> {
    let expected = count * element_type.size();
    if bytes.len() != expected {
        return Err(FormatError::RawSizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(match element_type {
        MetElementType::UShort => VoxelData::U16(
            bytes
                .chunks_exact(2)
                .map(|c| {
                    let b = [c[0], c[1]];
                    if msb {
                        u16::from_be_bytes(b)
                    } else {
                        u16::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        MetElementType::Short => VoxelData::I16(
            bytes
                .chunks_exact(2)
                .map(|c| {
                    let b = [c[0], c[1]];
                    if msb {
                        i16::from_be_bytes(b)
                    } else {
                        i16::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        MetElementType::Float => VoxelData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    if msb {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
    })
}

fn raw_path(header_path: &Path, name: &str) -> PathBuf {
    header_path.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

pub fn read_mhd(path: impl AsRef<Path>) -> Result<Volume, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (header, data_start) = parse_header(&bytes)?;
    let shape = header.shape();
    let payload = match &header.element_data_file {
        ElementDataFile::Local => bytes[data_start..].to_vec(),
        ElementDataFile::File(name) => {
            let rp = raw_path(path, name);
            match fs::read(&rp) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(FormatError::RawSizeMismatch {
                        expected: shape.len() * header.element_type.size(),
                        actual: 0,
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    let data = decode_voxels(&payload, header.element_type, header.byte_order_msb, shape.len())?;
    let domain = match header.element_type {
        MetElementType::Float => IntensityDomain::Real,
        _ => IntensityDomain::Raw16,
    };
    Ok(Volume::new(shape, header.geometry(), data, domain)?)
}

pub fn header_for(v: &Volume, data_file: &str) -> String {
    let g = v.geometry();
    let s = v.shape();
    let d = &g.direction;
    let mut out = String::new();
    let _ = writeln!(out, "ObjectType = Image");
    let _ = writeln!(out, "NDims = 3");
    let _ = writeln!(out, "BinaryData = True");
    let _ = writeln!(out, "BinaryDataByteOrderMSB = False");
    let _ = writeln!(out, "CompressedData = False");
    let _ = writeln!(
        out,
        "TransformMatrix = {} {} {} {} {} {} {} {} {}",
        d[(0, 0)],
        d[(1, 0)],
        d[(2, 0)],
        d[(0, 1)],
        d[(1, 1)],
        d[(2, 1)],
        d[(0, 2)],
        d[(1, 2)],
        d[(2, 2)]
    );
    let _ = writeln!(out, "Offset = {} {} {}", g.origin.x, g.origin.y, g.origin.z);
    let _ = writeln!(out, "ElementSpacing = {} {} {}", g.spacing.x, g.spacing.y, g.spacing.z);
    let _ = writeln!(out, "DimSize = {} {} {}", s.width, s.height, s.depth);
    let _ = writeln!(out, "ElementType = {}", MetElementType::of(v.data()).name());
    let _ = writeln!(out, "ElementDataFile = {data_file}");
    out
}

pub fn encode_voxels(data: &VoxelData, msb: bool) -> Vec<u8> {
    match data {
        VoxelData::U16(v) => v
            .iter()
            .flat_map(|x| if msb { x.to_be_bytes() } else { x.to_le_bytes() })
            .collect(),
        VoxelData::I16(v) => v
            .iter()
            .flat_map(|x| if msb { x.to_be_bytes() } else { x.to_le_bytes() })
            .collect(),
        VoxelData::F32(v) => v
            .iter()
            .flat_map(|x| if msb { x.to_be_bytes() } else { x.to_le_bytes() })
            .collect(),
    }
}

/// Writes `<stem>.mhd` and a sibling `<stem>.raw` (little-endian).
pub fn write_mhd(v: &Volume, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let raw = path.with_extension("raw");
    let raw_name = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| malformed(0, "raw file name is not valid UTF-8"))?
        .to_string();
    fs::write(path, header_for(v, &raw_name))?;
    fs::write(&raw, encode_voxels(v.data(), false))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HDR: &str = "NDims = 3\nDimSize = 4 4 4\nElementType = MET_USHORT\nElementSpacing = 1 1 1\nElementDataFile = img.raw\n";

    #[test]
    fn parses_minimal_header() {
        let (h, _) = parse_header(HDR.as_bytes()).unwrap();
        assert_eq!(h.dim_size, [4, 4, 4]);
        assert_eq!(h.element_type, MetElementType::UShort);
        assert_eq!(h.element_data_file, ElementDataFile::File("img.raw".into()));
    }

    #[test]
    fn unknown_key_is_error() {
        let text = format!("Bogus = 1\n{HDR}");
        assert!(matches!(
            parse_header(text.as_bytes()),
            Err(FormatError::MalformedHeader { line: 1, .. })
        ));
    }

    #[test]
    fn keys_are_case_sensitive() {
        let text = HDR.replace("NDims", "ndims");
        assert!(matches!(
            parse_header(text.as_bytes()),
            Err(FormatError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn bad_arity_is_error() {
        let text = HDR.replace("DimSize = 4 4 4", "DimSize = 4 4");
        assert!(matches!(
            parse_header(text.as_bytes()),
            Err(FormatError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn unsupported_type() {
        let text = HDR.replace("MET_USHORT", "MET_DOUBLE");
        assert!(matches!(
            parse_header(text.as_bytes()),
            Err(FormatError::UnsupportedElementType(t)) if t == "MET_DOUBLE"
        ));
    }

    #[test]
    fn big_endian_short() {
        let d = decode_voxels(&[0x01, 0x02], MetElementType::Short, true, 1).unwrap();
        assert_eq!(d, VoxelData::I16(vec![258]));
        let d = decode_voxels(&[0x01, 0x02], MetElementType::Short, false, 1).unwrap();
        assert_eq!(d, VoxelData::I16(vec![0x0201]));
    }

    #[test]
    fn raw_size_checked() {
        assert!(matches!(
            decode_voxels(&[0u8; 127], MetElementType::UShort, false, 64),
            Err(FormatError::RawSizeMismatch {
                expected: 128,
                actual: 127
            })
        ));
    }
}
