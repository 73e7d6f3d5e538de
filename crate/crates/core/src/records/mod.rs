//! TFRecord-compatible record files carrying MRI/CT training pairs.
//!
//! Each frame is `u64 length (LE) | masked crc32c(length) | payload |
//! masked crc32c(payload)`. Payloads are serialized [`Example`] messages; the
//! first record of an exported file is a header naming the export mode.

pub mod crc32c;
mod example;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub use crc32c::crc32c_masked;
pub use example::{Example, Feature};

use crate::patch::PatchPair;
use crate::volume::{Shape, Volume};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record {record}: {part} CRC mismatch")]
    CrcMismatch { record: usize, part: FramePart },
    #[error("record {record}: file ends inside the frame at byte {offset}")]
    TruncatedFile { record: usize, offset: u64 },
    #[error("malformed payload: {0}")]
    Decode(String),
    #[error("invalid export: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FramePart {
    Length,
    Payload,
}

impl std::fmt::Display for FramePart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FramePart::Length => "length",
            FramePart::Payload => "payload",
        })
    }
}

pub struct RecordWriter<W: Write> {
    inner: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        RecordWriter { inner }
    }

    pub fn write(&mut self, payload: &[u8]) -> io::Result<()> {
        let len = (payload.len() as u64).to_le_bytes();
        self.inner.write_all(&len)?;
        self.inner.write_all(&crc32c_masked(&len).to_le_bytes())?;
        self.inner.write_all(payload)?;
        self.inner.write_all(&crc32c_masked(payload).to_le_bytes())
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Iterates frames, yielding each verified payload. Stops after the first
/// error.
pub struct RecordReader<R: Read> {
    inner: R,
    record: usize,
    offset: u64,
    failed: bool,
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        RecordReader {
            inner,
            record: 0,
            offset: 0,
            failed: false,
        }
    }

    /// Fills `buf`; returns false on a clean end of input before any byte.
    fn read_exact_or_eof(&mut self, buf: &mut [u8], allow_eof: bool) -> Result<bool, RecordError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) if got == 0 && allow_eof => return Ok(false),
                Ok(0) => {
                    return Err(RecordError::TruncatedFile {
                        record: self.record,
                        offset: self.offset + got as u64,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }

    fn next_frame(&mut self) -> Result<Option<Vec<u8>>, RecordError> {
        let mut len = [0u8; 8];
        if !self.read_exact_or_eof(&mut len, true)? {
            return Ok(None);
        }
        let mut crc = [0u8; 4];
        self.read_exact_or_eof(&mut crc, false)?;
        if u32::from_le_bytes(crc) != crc32c_masked(&len) {
            return Err(RecordError::CrcMismatch {
                record: self.record,
                part: FramePart::Length,
            });
        }
        let n = u64::from_le_bytes(len);
        let mut payload = Vec::new();
        let got = (&mut self.inner).take(n).read_to_end(&mut payload)? as u64;
        if got < n {
            return Err(RecordError::TruncatedFile {
                record: self.record,
                offset: self.offset + got,
            });
        }
        self.offset += n;
        self.read_exact_or_eof(&mut crc, false)?;
        if u32::from_le_bytes(crc) != crc32c_masked(&payload) {
            return Err(RecordError::CrcMismatch {
                record: self.record,
                part: FramePart::Payload,
            });
        }
        self.record += 1;
        Ok(Some(payload))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Vec<u8>, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_frame().transpose();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

pub fn write_records<P: AsRef<[u8]>>(path: &Path, payloads: impl IntoIterator<Item = P>) -> Result<(), RecordError> {
    let mut w = RecordWriter::new(BufWriter::new(File::create(path)?));
    for p in payloads {
        w.write(p.as_ref())?;
    }
    w.into_inner()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Vec<u8>>, RecordError> {
    RecordReader::new(BufReader::new(File::open(path)?)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExportMode {
    /// One record per transverse slice.
    #[serde(rename = "2d-slice")]
    Slice2d,
    /// One record per 32³/16³ patch pair.
    #[serde(rename = "3d-patch")]
    Patch3d,
}

impl ExportMode {
    pub fn name(self) -> &'static str {
        match self {
            ExportMode::Slice2d => "2d-slice",
            ExportMode::Patch3d => "3d-patch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "2d-slice" => Some(ExportMode::Slice2d),
            "3d-patch" => Some(ExportMode::Patch3d),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub mode: ExportMode,
    pub subject: String,
    pub modality: String,
}

impl DatasetHeader {
    pub fn to_example(&self) -> Example {
        let b = |s: &str| Feature::Bytes(vec![s.as_bytes().to_vec()]);
        Example::new()
            .with("mode", b(self.mode.name()))
            .with("subject", b(&self.subject))
            .with("modality", b(&self.modality))
    }

    pub fn from_example(ex: &Example) -> Result<Self, RecordError> {
        let text = |key: &str| -> Result<String, RecordError> {
            let v = ex
                .get(key)
                .and_then(Feature::as_bytes)
                .and_then(|v| v.first())
                .ok_or_else(|| RecordError::InvalidPayload(format!("header lacks {key:?}")))?;
            String::from_utf8(v.clone()).map_err(|_| RecordError::InvalidPayload(format!("header {key:?} is not UTF-8")))
        };
        let mode = text("mode")?;
        Ok(DatasetHeader {
            mode: ExportMode::parse(&mode).ok_or_else(|| RecordError::InvalidPayload(format!("unknown mode {mode:?}")))?,
            subject: text("subject")?,
            modality: text("modality")?,
        })
    }
}

/// `<subject>-<modality>.tfrecord`
pub fn record_file_name(subject: &str, modality: &str) -> String {
    format!("{subject}-{modality}.tfrecord")
}

fn ints(v: &[usize]) -> Feature {
    Feature::Int64(v.iter().map(|&x| x as i64).collect())
}

/// A decoded training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub input: Vec<f32>,
    pub input_shape: Vec<usize>,
    pub target: Vec<f32>,
    pub target_shape: Vec<usize>,
    /// Patch anchor `(k, j, i)` or `[k]` for a slice.
    pub anchor: Option<Vec<usize>>,
    /// Per-voxel loss weights on the target grid.
    pub weight: Option<Vec<f32>>,
}

impl PairExample {
    pub fn from_patch(p: &PatchPair) -> Self {
        PairExample {
            input: p.input.clone(),
            input_shape: vec![crate::patch::INPUT_EDGE; 3],
            target: p.target.clone(),
            target_shape: vec![crate::patch::TARGET_EDGE; 3],
            anchor: Some(p.anchor.to_vec()),
            weight: None,
        }
    }

    pub fn to_example(&self) -> Example {
        let mut ex = Example::new()
            .with("input", Feature::Float(self.input.clone()))
            .with("input_shape", ints(&self.input_shape))
            .with("target", Feature::Float(self.target.clone()))
            .with("target_shape", ints(&self.target_shape));
        if let Some(a) = &self.anchor {
            ex = ex.with("anchor", ints(a));
        }
        if let Some(w) = &self.weight {
            ex = ex.with("weight", Feature::Float(w.clone()));
        }
        ex
    }

    pub fn from_example(ex: &Example) -> Result<Self, RecordError> {
        let floats = |key: &str| {
            ex.get(key)
                .and_then(Feature::as_floats)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| RecordError::InvalidPayload(format!("missing float feature {key:?}")))
        };
        let dims = |key: &str| -> Result<Option<Vec<usize>>, RecordError> {
            match ex.get(key) {
                None => Ok(None),
                Some(f) => f
                    .as_ints()
                    .ok_or_else(|| RecordError::InvalidPayload(format!("{key:?} is not an int64 list")))?
                    .iter()
                    .map(|&x| usize::try_from(x).map_err(|_| RecordError::InvalidPayload(format!("negative {key:?}"))))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Some),
            }
        };
        let need = |key: &str| dims(key)?.ok_or_else(|| RecordError::InvalidPayload(format!("missing {key:?}")));
        let pair = PairExample {
            input: floats("input")?,
            input_shape: need("input_shape")?,
            target: floats("target")?,
            target_shape: need("target_shape")?,
            anchor: dims("anchor")?,
            weight: match ex.get("weight") {
                Some(_) => Some(floats("weight")?),
                None => None,
            },
        };
        if pair.input_shape.iter().product::<usize>() != pair.input.len()
            || pair.target_shape.iter().product::<usize>() != pair.target.len()
            || pair.weight.as_ref().is_some_and(|w| w.len() != pair.target.len())
        {
            return Err(RecordError::InvalidPayload("shape does not match value count".into()));
        }
        Ok(pair)
    }
}

/// One pair per transverse slice of two volumes on the same grid.
pub fn slice_pairs(input: &Volume, target: &Volume) -> Result<Vec<PairExample>, RecordError> {
    if input.shape() != target.shape() {
        return Err(RecordError::InvalidPayload(format!(
            "slice export needs matching grids, got {} and {}",
            input.shape(),
            target.shape()
        )));
    }
    let s = input.shape();
    let plane = s.height * s.width;
    let (a, b) = (input.data().to_f32_vec(), target.data().to_f32_vec());
    Ok((0..s.depth)
        .map(|k| PairExample {
            input: a[k * plane..(k + 1) * plane].to_vec(),
            input_shape: vec![s.height, s.width],
            target: b[k * plane..(k + 1) * plane].to_vec(),
            target_shape: vec![s.height, s.width],
            anchor: Some(vec![k]),
            weight: None,
        })
        .collect())
}

/// Restacks slice pairs (in any order) into input and target voxel arrays.
pub fn stack_slices(pairs: &[PairExample]) -> Result<(Shape, Vec<f32>, Vec<f32>), RecordError> {
    let first = pairs.first().ok_or_else(|| RecordError::InvalidPayload("no slices".into()))?;
    let [h, w] = first.input_shape[..] else {
        return Err(RecordError::InvalidPayload("slice shape must be 2D".into()));
    };
    let shape = Shape::new(pairs.len(), h, w);
    let plane = h * w;
    let mut input = vec![0.0; shape.len()];
    let mut target = vec![0.0; shape.len()];
    let mut seen = vec![false; pairs.len()];
    for p in pairs {
        let k = match p.anchor.as_deref() {
            Some(&[k]) if k < pairs.len() && !seen[k] => k,
            _ => return Err(RecordError::InvalidPayload("slice indices are not a permutation".into())),
        };
        if p.input_shape != [h, w] || p.target_shape != [h, w] {
            return Err(RecordError::InvalidPayload("slices differ in shape".into()));
        }
        seen[k] = true;
        input[k * plane..(k + 1) * plane].copy_from_slice(&p.input);
        target[k * plane..(k + 1) * plane].copy_from_slice(&p.target);
    }
    Ok((shape, input, target))
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, pairs: &[PairExample]) -> Result<(), RecordError> {
    let payloads = std::iter::once(header.to_example().encode()).chain(pairs.iter().map(|p| p.to_example().encode()));
    write_records(path, payloads)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<PairExample>), RecordError> {
    let mut records = RecordReader::new(BufReader::new(File::open(path)?));
    let header = match records.next() {
        Some(r) => DatasetHeader::from_example(&Example::decode(&r?)?)?,
        None => return Err(RecordError::InvalidPayload("file has no header record".into())),
    };
    let pairs = records
        .map(|r| PairExample::from_example(&Example::decode(&r?)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, pairs))
}
