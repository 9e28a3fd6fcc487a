//! Per-channel scaling before INT8 quantization: the scaled matmul is exact in
//! float, and the quantized output error depends on alpha.
//!
//! cargo run --release --example scale_and_quantize

use dcomp::quant::{compute_scale, dequantize, quantize_scaled, scale_weights, simulate_layer};
use dcomp::synth::{synth_activations, synth_ensemble, SynthSpec};

fn main() -> dcomp::Result<()> {
    let spec = SynthSpec { rows: 128, cols: 256, ..SynthSpec::default() };
    let (w, stats) = synth_ensemble(&spec, 3)?;
    let x = synth_activations(&stats, 16, 4)?;

    let sv = compute_scale(&stats, 0.5)?;
    let q = quantize_scaled(&scale_weights(&w, &sv)?)?;
    let back = dequantize(&q)?;
    let worst = w.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("alpha=0.5: step {:.5}, worst dequantization error {worst:.5}", q.w_scale());
    println!("first scale factors: {:?}", &sv.factors()[..4]);

    println!("\n{:>5} {:>16} {:>16}", "alpha", "identity error", "int8 error");
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = simulate_layer(&x, &w, alpha)?;
        println!("{alpha:>5} {:>16.2e} {:>16.5}", r.scaling_identity_error, r.quantized_error);
    }
    Ok(())
}
