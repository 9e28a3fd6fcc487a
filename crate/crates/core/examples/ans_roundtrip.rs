//! The rANS byte codec on a skewed stream: size against the entropy bound.
//!
//! cargo run --release --example ans_roundtrip

use dcomp::codec::{ans_compress, ans_decompress_payload};
use dcomp::tensor::{byte_entropy, byte_histogram};

fn main() -> dcomp::Result<()> {
    // a two-sided geometric source, like small int8 weights
    let mut x: u32 = 12345;
    let data: Vec<u8> = (0..1_000_000)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            let mag = (x >> 8).trailing_ones().min(127) as i8;
            (if x & 1 == 0 { mag } else { -mag }) as u8
        })
        .collect();

    let (table, payload) = ans_compress(&data)?;
    let bound = data.len() as f64 * byte_entropy(&data) / 8.0;
    let used = byte_histogram(&data).iter().filter(|&&c| c > 0).count();
    println!("{} bytes, {used} distinct symbols, entropy {:.4} bits", data.len(), byte_entropy(&data));
    println!("payload {} bytes, entropy bound {bound:.0} bytes, overhead {:.3}%", payload.len(), 100.0 * (payload.len() as f64 / bound - 1.0));
    println!("frequency of 0: {}/4096", table.frequencies()[0]);

    assert_eq!(ans_decompress_payload(&payload, data.len())?, data);
    println!("round trip ok");
    Ok(())
}
