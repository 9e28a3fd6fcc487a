//! Compression ratio and throughput of the store and ANS codecs on synthetic
//! quantized weights.
//!
//! cargo run --release --example bench_codecs [MiB]

use dcomp::cli::synthetic_stream;
use dcomp::codec::bench::{bench_codecs_with, BenchOptions};

fn main() -> dcomp::Result<()> {
    let mib: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let data = synthetic_stream(mib << 20, 0.5, 42)?;
    for r in bench_codecs_with(&data, &BenchOptions::default())? {
        println!(
            "{:<6} ratio {:.4}  compress {:>7.1} MB/s  decompress {:>7.1} MB/s",
            r.codec.name(),
            r.ratio,
            r.compress_mb_s,
            r.decompress_mb_s
        );
    }
    Ok(())
}
