//! Compression ratio and throughput of the chunk codecs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backend, CodecId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub codec: CodecId,
    pub ratio: f64,
    pub compress_mb_s: f64,
    pub decompress_mb_s: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub chunk_size: usize,
    pub repetitions: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { chunk_size: 4 << 20, repetitions: 3 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Benchmarks every built-in codec on `data` with default options.
pub fn bench_codecs(data: &[u8]) -> Result<Vec<BenchRow>> {
    bench_codecs_with(data, &BenchOptions::default())
}

/// Times chunked compression and decompression of `data` for each codec.
///
/// Chunks are processed in parallel on the current rayon pool, as the
/// container does. Throughput is uncompressed megabytes (1e6 bytes) per
/// second, median over the repetitions.
pub fn bench_codecs_with(data: &[u8], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let reps = opts.repetitions.max(3);
    let mb = data.len() as f64 / 1e6;
    let mut rows = Vec::new();
    for codec in [CodecId::Store, CodecId::Ans] {
        let b = backend(codec);
        let mut ctimes = Vec::with_capacity(reps);
        let mut dtimes = Vec::with_capacity(reps);
        let mut compressed = Vec::new();
        for _ in 0..reps {
            let t = Instant::now();
            compressed = data
                .par_chunks(opts.chunk_size)
                .map(|c| b.compress(c))
                .collect::<Result<Vec<_>>>()?;
            ctimes.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            let lens: Vec<usize> = data.chunks(opts.chunk_size).map(<[u8]>::len).collect();
            let restored = compressed
                .par_iter()
                .zip(lens.par_iter())
                .map(|(p, &n)| b.decompress(p, n))
                .collect::<Result<Vec<_>>>()?;
            dtimes.push(t.elapsed().as_secs_f64());
            if restored.iter().map(Vec::len).sum::<usize>() != data.len() {
                return Err(Error::Internal(format!("{} round trip lost data", b.name())));
            }
        }
        let size: usize = compressed.iter().map(Vec::len).sum();
        rows.push(BenchRow {
            codec,
            ratio: data.len() as f64 / size as f64,
            compress_mb_s: mb / median(ctimes).max(1e-12),
            decompress_mb_s: mb / median(dtimes).max(1e-12),
        });
    }
    Ok(rows)
}
