//! The `DCC1` chunked container.
//!
//! ```text
//! "DCC1" | u16 version | u32 header_len | header | u32 chunk_count
//!        | chunk_count x (u8 codec, u64 file_offset, u64 comp_len, u64 uncomp_len, u32 crc32)
//!        | chunk payloads
//! ```
//!
//! The header is the tensor directory:
//!
//! ```text
//! u64 chunk_size | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u32 rows | u32 cols
//!             | f64 max_abs | f64 alpha | cols x f32 scale factors
//! u32 crc32 of everything above
//! ```
//!
//! All integers and floats are little-endian. The quantized tensors are
//! concatenated in directory order as raw int8 bytes, and that stream is cut
//! into `chunk_size` chunks (the last one may be short). Payloads follow the
//! table back to back in chunk order and the file ends with the last one.

use rayon::prelude::*;

use super::{decode_chunk, encode_chunk, CodecId};
use crate::error::{Error, Result};
use crate::quant::{QuantizedTensor, ScaleVector};

pub const MAGIC: [u8; 4] = *b"DCC1";
pub const VERSION: u16 = 1;
pub const MIN_CHUNK_SIZE: usize = 4096;
pub const DEFAULT_CHUNK_SIZE: usize = 16 << 20;
const CHUNK_ENTRY_BYTES: usize = 1 + 8 + 8 + 8 + 4;

/// Quantized tensors and everything needed to dequantize them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PackedModel {
    pub tensors: Vec<QuantizedTensor>,
}

impl PackedModel {
    pub fn new(tensors: Vec<QuantizedTensor>) -> Self {
        Self { tensors }
    }

    /// The int8 payload: all tensors back to back.
    pub fn stream(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.stream_len());
        for t in &self.tensors {
            out.extend(t.qvalues.iter().map(|&q| q as u8));
        }
        out
    }

    pub fn stream_len(&self) -> usize {
        self.tensors.iter().map(|t| t.qvalues.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&QuantizedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Which codec each chunk should use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChunkPlan {
    Uniform(CodecId),
    PerChunk(Vec<CodecId>),
}

impl ChunkPlan {
    /// One compressed chunk at the end of every complete block of `block_size` chunks.
    pub fn last_of_block(n_chunks: usize, block_size: usize) -> Self {
        ChunkPlan::PerChunk(
            (0..n_chunks)
                .map(|i| {
                    if block_size > 0 && i % block_size == block_size - 1 {
                        CodecId::Ans
                    } else {
                        CodecId::Store
                    }
                })
                .collect(),
        )
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        ChunkPlan::PerChunk(
            mask.iter()
                .map(|&m| if m { CodecId::Ans } else { CodecId::Store })
                .collect(),
        )
    }

    fn codec_for(&self, i: usize) -> CodecId {
        match self {
            ChunkPlan::Uniform(c) => *c,
            ChunkPlan::PerChunk(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub codec: CodecId,
    pub uncompressed_len: usize,
    pub payload: Vec<u8>,
    /// CRC32 of the uncompressed bytes.
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub max_abs: f64,
    pub alpha: f64,
    pub scale: Vec<f32>,
}

impl TensorEntry {
    fn from_tensor(t: &QuantizedTensor) -> Self {
        Self {
            name: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
            max_abs: t.max_abs,
            alpha: t.scale.alpha(),
            scale: t.scale.to_f32(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub chunk_size: usize,
    pub tensors: Vec<TensorEntry>,
    pub chunks: Vec<Chunk>,
}

pub fn chunk_count(stream_len: usize, chunk_size: usize) -> usize {
    stream_len.div_ceil(chunk_size)
}

pub fn pack(model: &PackedModel, chunk_size: usize, plan: &ChunkPlan) -> Result<CompressedModel> {
    if chunk_size < MIN_CHUNK_SIZE {
        return Err(Error::InvalidParameter(format!(
            "chunk size {chunk_size} below the minimum of {MIN_CHUNK_SIZE}"
        )));
    }
    for t in &model.tensors {
        t.validate()?;
        check_u32(t.rows, "rows")?;
        check_u32(t.cols, "cols")?;
        if t.name.len() > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!("tensor name too long: {}", t.name.len())));
        }
    }
    let stream = model.stream();
    let n_chunks = chunk_count(stream.len(), chunk_size);
    if let ChunkPlan::PerChunk(v) = plan {
        if v.len() != n_chunks {
            return Err(Error::PlanMismatch { plan: v.len(), chunks: n_chunks });
        }
    }

    let chunks = stream
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(i, data)| {
            let (codec, payload) = encode_chunk(data, plan.codec_for(i))?;
            Ok(Chunk {
                codec,
                uncompressed_len: data.len(),
                payload,
                checksum: crc32fast::hash(data),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CompressedModel {
        chunk_size,
        tensors: model.tensors.iter().map(TensorEntry::from_tensor).collect(),
        chunks,
    })
}

fn check_u32(v: usize, what: &str) -> Result<()> {
    if v > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!("{what} {v} exceeds u32")));
    }
    Ok(())
}

/// Decodes every chunk, verifies checksums and rebuilds the tensors.
pub fn unpack(file: &CompressedModel) -> Result<PackedModel> {
    file.check_layout()?;
    let pieces = file
        .chunks
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let data = decode_chunk(c.codec, &c.payload, c.uncompressed_len)
                .map_err(|e| Error::ChunkCorrupt { chunk: i, source: Box::new(e) })?;
            if crc32fast::hash(&data) != c.checksum {
                return Err(Error::ChecksumMismatch { chunk: i });
            }
            Ok(data)
        })
        .collect::<Result<Vec<_>>>()?;
    let stream: Vec<u8> = pieces.concat();

    let mut tensors = Vec::with_capacity(file.tensors.len());
    let mut offset = 0;
    for e in &file.tensors {
        let n = e.rows * e.cols;
        let qvalues: Vec<i8> = stream[offset..offset + n].iter().map(|&b| b as i8).collect();
        offset += n;
        let t = QuantizedTensor {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
            qvalues,
            max_abs: e.max_abs,
            scale: ScaleVector::from_f32(e.alpha, &e.scale)?,
        };
        t.validate()?;
        tensors.push(t);
    }
    Ok(PackedModel { tensors })
}

impl CompressedModel {
    pub fn stream_len(&self) -> usize {
        self.tensors.iter().map(|t| t.rows * t.cols).sum()
    }

    /// Sum of chunk payload sizes.
    pub fn payload_bytes(&self) -> usize {
        self.chunks.iter().map(|c| c.payload.len()).sum()
    }

    /// Uncompressed stream size over stored payload size.
    pub fn payload_ratio(&self) -> f64 {
        let p = self.payload_bytes();
        if p == 0 {
            1.0
        } else {
            self.stream_len() as f64 / p as f64
        }
    }

    /// Codec of every chunk, in order.
    pub fn codecs(&self) -> Vec<CodecId> {
        self.chunks.iter().map(|c| c.codec).collect()
    }

    fn check_layout(&self) -> Result<()> {
        if self.chunk_size < MIN_CHUNK_SIZE {
            return Err(Error::Malformed(format!("chunk size {} too small", self.chunk_size)));
        }
        let total = self.stream_len();
        let expected = chunk_count(total, self.chunk_size);
        if self.chunks.len() != expected {
            return Err(Error::Malformed(format!(
                "{} chunks for a {total}-byte stream, expected {expected}",
                self.chunks.len()
            )));
        }
        for (i, c) in self.chunks.iter().enumerate() {
            let want = if i + 1 == expected { total - i * self.chunk_size } else { self.chunk_size };
            if c.uncompressed_len != want {
                return Err(Error::Malformed(format!(
                    "chunk {i} claims {} bytes, expected {want}",
                    c.uncompressed_len
                )));
            }
            if c.codec == CodecId::Store && c.payload.len() != c.uncompressed_len {
                return Err(Error::Malformed(format!("stored chunk {i} has wrong payload length")));
            }
        }
        Ok(())
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut h = Vec::new();
        h.extend_from_slice(&(self.chunk_size as u64).to_le_bytes());
        h.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            h.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            h.extend_from_slice(t.name.as_bytes());
            h.extend_from_slice(&(t.rows as u32).to_le_bytes());
            h.extend_from_slice(&(t.cols as u32).to_le_bytes());
            h.extend_from_slice(&t.max_abs.to_le_bytes());
            h.extend_from_slice(&t.alpha.to_le_bytes());
            for s in &t.scale {
                h.extend_from_slice(&s.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&h);
        h.extend_from_slice(&crc.to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header_bytes();
        let table_start = 4 + 2 + 4 + header.len() + 4;
        let mut offset = (table_start + self.chunks.len() * CHUNK_ENTRY_BYTES) as u64;

        let mut out = Vec::with_capacity(offset as usize + self.payload_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.chunks.len() as u32).to_le_bytes());
        for c in &self.chunks {
            out.push(c.codec as u8);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(c.payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&(c.uncompressed_len as u64).to_le_bytes());
            out.extend_from_slice(&c.checksum.to_le_bytes());
            offset += c.payload.len() as u64;
        }
        for c in &self.chunks {
            out.extend_from_slice(&c.payload);
        }
        out
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Parses and structurally validates a container. Chunk checksums are
    /// verified by [`unpack`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = r.u32()? as usize;
        let header = r.take(header_len)?;
        let (chunk_size, tensors) = parse_header(header)?;

        let chunk_count = r.u32()? as usize;
        let table_len = chunk_count
            .checked_mul(CHUNK_ENTRY_BYTES)
            .ok_or_else(|| Error::Malformed("chunk count overflows".into()))?;
        let table = r.take(table_len)?;
        let mut expected_offset = r.pos as u64;

        let mut chunks = Vec::with_capacity(chunk_count);
        for (i, entry) in table.chunks(CHUNK_ENTRY_BYTES).enumerate() {
            let mut e = Reader::new(entry);
            let codec = CodecId::from_tag(e.u8()?)?;
            let file_offset = e.u64()?;
            let comp_len = e.u64()?;
            let uncomp_len = e.u64()?;
            let checksum = e.u32()?;
            if file_offset != expected_offset {
                return Err(Error::Malformed(format!(
                    "chunk {i} at offset {file_offset}, expected {expected_offset}"
                )));
            }
            let end = file_offset
                .checked_add(comp_len)
                .filter(|&end| end <= bytes.len() as u64)
                .ok_or(Error::Truncated {
                    offset: file_offset as usize,
                    needed: comp_len as usize,
                    available: bytes.len().saturating_sub(file_offset as usize),
                })?;
            let uncompressed_len = usize::try_from(uncomp_len)
                .map_err(|_| Error::Malformed(format!("chunk {i} length overflows")))?;
            chunks.push(Chunk {
                codec,
                uncompressed_len,
                payload: bytes[file_offset as usize..end as usize].to_vec(),
                checksum,
            });
            expected_offset = end;
        }
        if expected_offset != bytes.len() as u64 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after the last chunk",
                bytes.len() as u64 - expected_offset
            )));
        }

        let model = CompressedModel { chunk_size, tensors, chunks };
        model.check_layout()?;
        Ok(model)
    }
}

fn parse_header(header: &[u8]) -> Result<(usize, Vec<TensorEntry>)> {
    if header.len() < 4 {
        return Err(Error::Malformed("header too short".into()));
    }
    let (body, crc) = header.split_at(header.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Malformed("header checksum mismatch".into()));
    }
    let mut r = Reader::new(body);
    let chunk_size = usize::try_from(r.u64()?)
        .map_err(|_| Error::Malformed("chunk size overflows".into()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    let mut total: usize = 0;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let max_abs = r.f64()?;
        let alpha = r.f64()?;
        let scale = r
            .take(cols.checked_mul(4).ok_or_else(|| Error::Malformed("scale overflows".into()))?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        total = rows
            .checked_mul(cols)
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| Error::Malformed(format!("tensor `{name}` shape overflows")))?;
        tensors.push(TensorEntry { name, rows, cols, max_abs, alpha, scale });
    }
    if r.pos != body.len() {
        return Err(Error::Malformed("trailing bytes in header".into()));
    }
    Ok((chunk_size, tensors))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, rows: usize, cols: usize, fill: impl Fn(usize) -> i8) -> QuantizedTensor {
        QuantizedTensor {
            name: name.into(),
            rows,
            cols,
            qvalues: (0..rows * cols).map(fill).collect(),
            max_abs: 0.75,
            scale: ScaleVector::from_f32(0.5, &vec![1.5; cols]).unwrap(),
        }
    }

    fn model() -> PackedModel {
        PackedModel::new(vec![
            tensor("a", 64, 100, |i| ((i * 31) % 7) as i8 - 3),
            tensor("b", 30, 50, |i| (((i * 17) % 255) as i32 - 127) as i8),
        ])
    }

    #[test]
    fn round_trip_all_store() {
        let m = model();
        let c = pack(&m, 4096, &ChunkPlan::Uniform(CodecId::Store)).unwrap();
        assert_eq!(c.payload_bytes(), m.stream_len());
        let bytes = c.to_bytes();
        let parsed = CompressedModel::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(unpack(&parsed).unwrap(), m);
    }

    #[test]
    fn round_trip_partial_plan() {
        let m = model();
        let n = chunk_count(m.stream_len(), 4096);
        let c = pack(&m, 4096, &ChunkPlan::last_of_block(n, 2)).unwrap();
        let parsed = CompressedModel::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(unpack(&parsed).unwrap(), m);
        assert_eq!(parsed.chunks[1].codec, CodecId::Ans);
        assert_eq!(parsed.chunks[0].codec, CodecId::Store);
    }

    #[test]
    fn empty_directory_is_valid() {
        let c = pack(&PackedModel::default(), 4096, &ChunkPlan::Uniform(CodecId::Ans)).unwrap();
        assert!(c.chunks.is_empty());
        let parsed = CompressedModel::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(unpack(&parsed).unwrap(), PackedModel::default());
    }

    #[test]
    fn plan_length_must_match() {
        let err = pack(&model(), 4096, &ChunkPlan::PerChunk(vec![CodecId::Ans; 3])).unwrap_err();
        assert!(matches!(err, Error::PlanMismatch { plan: 3, chunks: 2 }));
    }

    #[test]
    fn small_chunks_rejected() {
        assert!(pack(&model(), 1024, &ChunkPlan::Uniform(CodecId::Store)).is_err());
    }

    #[test]
    fn distinct_errors_for_header_damage() {
        let bytes = pack(&model(), 4096, &ChunkPlan::Uniform(CodecId::Ans)).unwrap().to_bytes();

        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(CompressedModel::from_bytes(&b), Err(Error::BadMagic { .. })));

        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(CompressedModel::from_bytes(&b), Err(Error::UnsupportedVersion(9))));

        assert!(matches!(
            CompressedModel::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(CompressedModel::from_bytes(&bytes[..7]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn payload_flip_names_the_chunk() {
        let c = pack(&model(), 4096, &ChunkPlan::Uniform(CodecId::Store)).unwrap();
        let mut bytes = c.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        let parsed = CompressedModel::from_bytes(&bytes).unwrap();
        let err = unpack(&parsed).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { chunk: 1 }), "{err}");
        assert!(err.to_string().contains("chunk 1"));
    }
}
