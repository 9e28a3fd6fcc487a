//! The `DCW1` weights file and its companion activation-statistics JSON.
//!
//! ```text
//! "DCW1" | u16 version=1 | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64, 2=i8)
//!             | u32 rows | u32 cols | rows*cols values, row-major, little-endian
//! ```
//!
//! The statistics file is a JSON object mapping tensor name to the array of
//! per-input-channel maximum absolute activations.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ActivationStats, WeightTensor};

pub const MAGIC: [u8; 4] = *b"DCW1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    I8 = 2,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::I8),
            t => Err(Error::Malformed(format!("unknown dtype tag {t}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::I8 => 1,
        }
    }
}

pub fn encode_weights(tensors: &[WeightTensor], dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for t in tensors {
        let name = t.name().as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| too_big("name"))?.to_le_bytes());
        out.extend_from_slice(name);
        out.push(dtype as u8);
        out.extend_from_slice(&u32::try_from(t.rows()).map_err(|_| too_big("rows"))?.to_le_bytes());
        out.extend_from_slice(&u32::try_from(t.cols()).map_err(|_| too_big("cols"))?.to_le_bytes());
        for &v in t.values() {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::I8 => {
                    if v.fract() != 0.0 || !(-128.0..=127.0).contains(&v) {
                        return Err(Error::InvalidParameter(format!(
                            "`{}` holds {v}, not representable as i8",
                            t.name()
                        )));
                    }
                    out.push(v as i8 as u8);
                }
            }
        }
    }
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::InvalidParameter(format!("{what} does not fit the DCW1 field width"))
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<WeightTensor>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let available = bytes.len() - pos;
        if n > available {
            return Err(Error::Truncated { offset: pos, needed: n, available });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };

    let magic: [u8; 4] = take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_tag(take(1)?[0])?;
        let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n_bytes = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::Malformed(format!("tensor `{name}` shape overflows")))?;
        let raw = take(n_bytes)?;
        let values: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            DType::I8 => raw.iter().map(|&b| b as i8 as f64).collect(),
        };
        tensors.push(WeightTensor::new(name, rows, cols, values)?);
    }
    if pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(tensors)
}

pub fn encode_stats(stats: &[ActivationStats]) -> Result<String> {
    let map: BTreeMap<&str, &[f64]> = stats
        .iter()
        .map(|s| (s.name.as_str(), s.channel_max.as_slice()))
        .collect();
    Ok(serde_json::to_string_pretty(&map)?)
}

/// Parses the statistics JSON, keyed by tensor name.
pub fn decode_stats(json: &str) -> Result<BTreeMap<String, ActivationStats>> {
    let raw: BTreeMap<String, Vec<f64>> = serde_json::from_str(json)?;
    raw.into_iter()
        .map(|(name, v)| Ok((name.clone(), ActivationStats::new(name, v)?)))
        .collect()
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<WeightTensor>> {
    decode_weights(&std::fs::read(path)?)
}

pub fn write_weights(path: impl AsRef<Path>, tensors: &[WeightTensor], dtype: DType) -> Result<()> {
    std::fs::write(path, encode_weights(tensors, dtype)?)?;
    Ok(())
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<BTreeMap<String, ActivationStats>> {
    decode_stats(&std::fs::read_to_string(path)?)
}

pub fn write_stats(path: impl AsRef<Path>, stats: &[ActivationStats]) -> Result<()> {
    std::fs::write(path, encode_stats(stats)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_f32_file_parses() {
        // one 1x2 f32 tensor named "fc"
        let mut b = b"DCW1".to_vec();
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(b"fc");
        b.push(0);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&0.25f32.to_le_bytes());
        b.extend_from_slice(&(-3.5f32).to_le_bytes());
        let t = decode_weights(&b).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].name(), "fc");
        assert_eq!(t[0].values(), &[0.25, -3.5]);
        assert_eq!(encode_weights(&t, DType::F32).unwrap(), b);
    }

    #[test]
    fn i8_tensors_round_trip() {
        let t = WeightTensor::new("q", 2, 2, vec![-128.0, 127.0, 0.0, -1.0]).unwrap();
        let b = encode_weights(std::slice::from_ref(&t), DType::I8).unwrap();
        assert_eq!(&b[b.len() - 4..], &[0x80, 0x7f, 0x00, 0xff]);
        assert_eq!(decode_weights(&b).unwrap(), vec![t]);
        let bad = WeightTensor::new("q", 1, 1, vec![0.5]).unwrap();
        assert!(encode_weights(&[bad], DType::I8).is_err());
    }

    #[test]
    fn rejects_damage() {
        let t = WeightTensor::new("w", 1, 1, vec![1.0]).unwrap();
        let b = encode_weights(&[t], DType::F64).unwrap();
        assert!(matches!(decode_weights(&b[..b.len() - 1]), Err(Error::Truncated { .. })));
        let mut x = b.clone();
        x[0] = b'X';
        assert!(matches!(decode_weights(&x), Err(Error::BadMagic { .. })));
        let mut x = b.clone();
        x[4] = 2;
        assert!(matches!(decode_weights(&x), Err(Error::UnsupportedVersion(2))));
        let mut x = b.clone();
        x.push(0);
        assert!(decode_weights(&x).is_err());
    }

    #[test]
    fn stats_json() {
        let s = decode_stats(r#"{"a": [1.0, 0.5], "b": [0]}"#).unwrap();
        assert_eq!(s["a"].channel_max, vec![1.0, 0.5]);
        assert!(decode_stats(r#"{"a": [-1.0]}"#).is_err());
        let text = encode_stats(&[s["a"].clone(), s["b"].clone()]).unwrap();
        assert_eq!(decode_stats(&text).unwrap(), s);
    }
}
