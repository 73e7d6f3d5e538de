//! Minimal protobuf encoding of the `Example { Features { map<string,
//! Feature> } }` message family, covering the bytes, float and int64 lists.

use std::collections::BTreeMap;

use super::RecordError;

const WIRE_VARINT: u8 = 0;
const WIRE_FIXED64: u8 = 1;
const WIRE_LEN: u8 = 2;
const WIRE_FIXED32: u8 = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum Feature {
    Bytes(Vec<Vec<u8>>),
    Float(Vec<f32>),
    Int64(Vec<i64>),
}

impl Feature {
    pub fn as_floats(&self) -> Option<&[f32]> {
        match self {
            Feature::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            Feature::Int64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[Vec<u8>]> {
        match self {
            Feature::Bytes(v) => Some(v),
            _ => None,
        }
    }
}

/// Keys are kept sorted, so encoding is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Example {
    pub features: BTreeMap<String, Feature>,
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_tag(out: &mut Vec<u8>, field: u32, wire: u8) {
    put_varint(out, ((field as u64) << 3) | wire as u64);
}

fn put_bytes(out: &mut Vec<u8>, field: u32, bytes: &[u8]) {
    put_tag(out, field, WIRE_LEN);
    put_varint(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

fn encode_feature(f: &Feature) -> Vec<u8> {
    let mut list = Vec::new();
    let field = match f {
        Feature::Bytes(items) => {
            for b in items {
                put_bytes(&mut list, 1, b);
            }
            1
        }
        Feature::Float(values) => {
            if !values.is_empty() {
                let mut packed = Vec::with_capacity(values.len() * 4);
                for v in values {
                    packed.extend_from_slice(&v.to_le_bytes());
                }
                put_bytes(&mut list, 1, &packed);
            }
            2
        }
        Feature::Int64(values) => {
            if !values.is_empty() {
                let mut packed = Vec::new();
                for &v in values {
                    put_varint(&mut packed, v as u64);
                }
                put_bytes(&mut list, 1, &packed);
            }
            3
        }
    };
    let mut out = Vec::with_capacity(list.len() + 6);
    put_bytes(&mut out, field, &list);
    out
}

impl Example {
    pub fn new() -> Self {
        Example::default()
    }

    pub fn with(mut self, key: &str, f: Feature) -> Self {
        self.features.insert(key.to_string(), f);
        self
    }

    pub fn get(&self, key: &str) -> Option<&Feature> {
        self.features.get(key)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut features = Vec::new();
        for (key, f) in &self.features {
            let mut entry = Vec::new();
            put_bytes(&mut entry, 1, key.as_bytes());
            put_bytes(&mut entry, 2, &encode_feature(f));
            put_bytes(&mut features, 1, &entry);
        }
        let mut out = Vec::with_capacity(features.len() + 6);
        put_bytes(&mut out, 1, &features);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let mut ex = Example::new();
        let mut top = Cursor::new(bytes);
        while let Some((field, value)) = top.next_field()? {
            let Value::Len(features) = value else { continue };
            if field != 1 {
                continue;
            }
            let mut fc = Cursor::new(features);
            while let Some((field, value)) = fc.next_field()? {
                let (1, Value::Len(entry)) = (field, value) else { continue };
                let (key, feature) = decode_entry(entry)?;
                ex.features.insert(key, feature);
            }
        }
        Ok(ex)
    }
}

fn decode_entry(entry: &[u8]) -> Result<(String, Feature), RecordError> {
    let mut key = String::new();
    let mut feature = Feature::Bytes(Vec::new());
    let mut c = Cursor::new(entry);
    while let Some((field, value)) = c.next_field()? {
        match (field, value) {
            (1, Value::Len(k)) => {
                key = String::from_utf8(k.to_vec()).map_err(|_| RecordError::Decode("feature key is not UTF-8".into()))?;
            }
            (2, Value::Len(f)) => feature = decode_feature(f)?,
            _ => {}
        }
    }
    Ok((key, feature))
}

fn decode_feature(bytes: &[u8]) -> Result<Feature, RecordError> {
    let mut feature = Feature::Bytes(Vec::new());
    let mut c = Cursor::new(bytes);
    while let Some((field, value)) = c.next_field()? {
        let Value::Len(list) = value else { continue };
        feature = match field {
            1 => {
                let mut items = Vec::new();
                let mut lc = Cursor::new(list);
                while let Some((f, v)) = lc.next_field()? {
                    if let (1, Value::Len(b)) = (f, v) {
                        items.push(b.to_vec());
                    }
                }
                Feature::Bytes(items)
            }
            2 => {
                let mut values = Vec::new();
                let mut lc = Cursor::new(list);
                while let Some((f, v)) = lc.next_field()? {
                    match (f, v) {
                        (1, Value::Len(p)) => {
                            if p.len() % 4 != 0 {
                                return Err(RecordError::Decode("packed float list length not a multiple of 4".into()));
                            }
                            values.extend(p.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
                        }
                        (1, Value::Fixed32(b)) => values.push(f32::from_le_bytes(b)),
                        _ => {}
                    }
                }
                Feature::Float(values)
            }
            3 => {
                let mut values = Vec::new();
                let mut lc = Cursor::new(list);
                while let Some((f, v)) = lc.next_field()? {
                    match (f, v) {
                        (1, Value::Len(p)) => {
                            let mut pc = Cursor::new(p);
                            while !pc.done() {
                                values.push(pc.varint()? as i64);
                            }
                        }
                        (1, Value::Varint(x)) => values.push(x as i64),
                        _ => {}
                    }
                }
                Feature::Int64(values)
            }
            _ => continue,
        };
    }
    Ok(feature)
}

enum Value<'a> {
    Varint(u64),
    Fixed32([u8; 4]),
    Len(&'a [u8]),
    Other,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], RecordError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| RecordError::Decode("field runs past end of message".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn varint(&mut self) -> Result<u64, RecordError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = *self.take(1)?.first().expect("one byte");
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(RecordError::Decode("varint longer than 10 bytes".into()))
    }

    fn next_field(&mut self) -> Result<Option<(u32, Value<'a>)>, RecordError> {
        if self.done() {
            return Ok(None);
        }
        let tag = self.varint()?;
        let field = (tag >> 3) as u32;
        let value = match (tag & 7) as u8 {
            WIRE_VARINT => Value::Varint(self.varint()?),
            WIRE_FIXED64 => {
                self.take(8)?;
                Value::Other
            }
            WIRE_LEN => {
                let n = self.varint()?;
                let n = usize::try_from(n).map_err(|_| RecordError::Decode("length overflows".into()))?;
                Value::Len(self.take(n)?)
            }
            WIRE_FIXED32 => {
                let b = self.take(4)?;
                Value::Fixed32([b[0], b[1], b[2], b[3]])
            }
            w => return Err(RecordError::Decode(format!("unsupported wire type {w}"))),
        };
        Ok(Some((field, value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_encoding() {
        // Example{features{feature{"a": int64_list{value: [1]}}}}
        let ex = Example::new().with("a", Feature::Int64(vec![1]));
        let expect = [
            0x0a, 0x0c, // features
            0x0a, 0x0a, // map entry
            0x0a, 0x01, b'a', // key
            0x12, 0x05, // Feature
            0x1a, 0x03, // int64_list
            0x0a, 0x01, 0x01, // packed [1]
        ];
        assert_eq!(ex.encode(), expect.to_vec());
    }

    #[test]
    fn round_trip_all_kinds() {
        let ex = Example::new()
            .with("input", Feature::Float(vec![0.0, 1.5, -2.25, f32::MAX]))
            .with("shape", Feature::Int64(vec![32, 32, 32, -1, i64::MIN]))
            .with("mode", Feature::Bytes(vec![b"3d-patch".to_vec(), Vec::new()]))
            .with("empty", Feature::Float(Vec::new()));
        let back = Example::decode(&ex.encode()).unwrap();
        assert_eq!(back, ex);
    }

    #[test]
    fn unpacked_values_are_accepted() {
        // float_list with two unpacked fixed32 values
        let mut list = Vec::new();
        for v in [1.0f32, 2.0] {
            put_tag(&mut list, 1, WIRE_FIXED32);
            list.extend_from_slice(&v.to_le_bytes());
        }
        let mut feature = Vec::new();
        put_bytes(&mut feature, 2, &list);
        assert_eq!(decode_feature(&feature).unwrap(), Feature::Float(vec![1.0, 2.0]));
    }

    #[test]
    fn truncated_message_is_an_error() {
        let bytes = Example::new().with("x", Feature::Float(vec![1.0; 8])).encode();
        assert!(Example::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
