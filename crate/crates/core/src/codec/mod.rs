//! Lossless chunk codecs, the `DCC1` container and a small benchmark harness.

pub mod ans;
pub mod bench;
pub mod container;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ans::{ans_compress, ans_decompress, ans_decompress_payload, AnsTable};
pub use bench::{bench_codecs, BenchRow};
pub use container::{pack, unpack, Chunk, CompressedModel, PackedModel, ChunkPlan};

/// Codec tag stored per chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum CodecId {
    Store = 0,
    Ans = 1,
}

impl CodecId {
    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CodecId::Store),
            1 => Ok(CodecId::Ans),
            t => Err(Error::Malformed(format!("unknown codec tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Store => "store",
            CodecId::Ans => "ans",
        }
    }
}

/// A lossless byte codec.
///
/// External compressors can be plugged in for benchmarking by implementing
/// this trait; only the built-in backends can be referenced from a container.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn compress(&self, data: &[u8]) -> Result<Vec<u8>>;
    fn decompress(&self, payload: &[u8], out_len: usize) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Store;

impl Backend for Store {
    fn name(&self) -> &str {
        "store"
    }

    fn compress(&self, data: &[u8]) -> Result<Vec<u8>> {
        Ok(data.to_vec())
    }

    fn decompress(&self, payload: &[u8], out_len: usize) -> Result<Vec<u8>> {
        if payload.len() != out_len {
            return Err(Error::CorruptStream);
        }
        Ok(payload.to_vec())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ans;

impl Backend for Ans {
    fn name(&self) -> &str {
        "ans"
    }

    fn compress(&self, data: &[u8]) -> Result<Vec<u8>> {
        ans_compress(data).map(|(_, payload)| payload)
    }

    fn decompress(&self, payload: &[u8], out_len: usize) -> Result<Vec<u8>> {
        ans_decompress_payload(payload, out_len)
    }
}

pub fn backend(id: CodecId) -> &'static dyn Backend {
    match id {
        CodecId::Store => &Store,
        CodecId::Ans => &Ans,
    }
}

/// Compresses one chunk with `requested`, falling back to store when the
/// coded form is not smaller than the input.
pub fn encode_chunk(data: &[u8], requested: CodecId) -> Result<(CodecId, Vec<u8>)> {
    match requested {
        CodecId::Store => Ok((CodecId::Store, data.to_vec())),
        CodecId::Ans => {
            if data.is_empty() {
                return Ok((CodecId::Store, Vec::new()));
            }
            let coded = Ans.compress(data)?;
            if coded.len() >= data.len() {
                Ok((CodecId::Store, data.to_vec()))
            } else {
                Ok((CodecId::Ans, coded))
            }
        }
    }
}

pub fn decode_chunk(codec: CodecId, payload: &[u8], out_len: usize) -> Result<Vec<u8>> {
    backend(codec).decompress(payload, out_len)
}

/// Size of `data` after chunked ANS coding with store fallback.
pub fn chunked_ans_size(data: &[u8], chunk_size: usize) -> Result<u64> {
    use rayon::prelude::*;
    let sizes = data
        .par_chunks(chunk_size.max(1))
        .map(|c| encode_chunk(c, CodecId::Ans).map(|(_, p)| p.len() as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(sizes.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incompressible_chunk_falls_back_to_store() {
        let data: Vec<u8> = (0..=255u8).collect();
        let (id, p) = encode_chunk(&data, CodecId::Ans).unwrap();
        assert_eq!(id, CodecId::Store);
        assert_eq!(p, data);
    }

    #[test]
    fn codec_tags() {
        assert_eq!(CodecId::from_tag(0).unwrap(), CodecId::Store);
        assert_eq!(CodecId::from_tag(1).unwrap(), CodecId::Ans);
        assert!(CodecId::from_tag(2).is_err());
    }

    #[test]
    fn store_checks_length() {
        assert!(Store.decompress(&[1, 2, 3], 2).is_err());
    }
}
