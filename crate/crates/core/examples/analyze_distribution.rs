//! Float vs. quantized weight distributions of one synthetic layer, and how
//! per-channel scaling reshapes the int8 histogram.
//!
//! cargo run --release --example analyze_distribution

use dcomp::quant::{analyze_quantized, quantize, scale_and_quantize};
use dcomp::synth::{synth_ensemble, SynthSpec};
use dcomp::tensor::analyze_float;

fn main() -> dcomp::Result<()> {
    let (w, stats) = synth_ensemble(&SynthSpec::default(), 1)?;
    let f = analyze_float(&w)?;
    let act_max = stats.channel_max.iter().cloned().fold(0.0, f64::max);
    println!("weights: range [{:.3}, {:.3}], std {:.3}, {} outliers", f.min, f.max, f.stddev, f.outlier_count);
    println!("activation channel max: up to {act_max:.1} ({:.0}x the weight range)", act_max / w.max_abs());

    println!("\n{:<10} {:>10} {:>14}", "", "near_zero", "entropy(bits)");
    println!("{:<10} {:>10.4} {:>14.4}", "float", f.near_zero_fraction, f.byte_entropy);
    let plain = analyze_quantized(&quantize(&w)?)?;
    println!("{:<10} {:>10.4} {:>14.4}", "int8", plain.near_zero_fraction, plain.byte_entropy);
    for alpha in [0.5, 0.9] {
        let r = analyze_quantized(&scale_and_quantize(&w, &stats, alpha)?)?;
        println!("{:<10} {:>10.4} {:>14.4}", format!("int8 a={alpha}"), r.near_zero_fraction, r.byte_entropy);
    }
    Ok(())
}
