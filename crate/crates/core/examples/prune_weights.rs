//! Activation-aware pruning of quantized weights, per tensor and per row.
//!
//! cargo run --release --example prune_weights [alpha]

use dcomp::codec::chunked_ans_size;
use dcomp::prune::{prune, PruneConfig, PruneScope};
use dcomp::quant::scale_and_quantize;
use dcomp::synth::{synth_ensemble, SynthSpec};
use dcomp::tensor::compression_ratio;

fn main() -> dcomp::Result<()> {
    let alpha: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.3);
    let (w, stats) = synth_ensemble(&SynthSpec::default(), 8)?;
    let q = scale_and_quantize(&w, &stats, alpha)?;
    let ratio = |v: &[i8]| -> dcomp::Result<f64> {
        let bytes: Vec<u8> = v.iter().map(|&x| x as u8).collect();
        compression_ratio(bytes.len() as u64, chunked_ans_size(&bytes, 1 << 20)?)
    };
    let zeros = |v: &[i8]| v.iter().filter(|&&x| x == 0).count();
    println!("alpha={alpha}: {} of {} already zero, CR {:.4}", zeros(&q.qvalues), q.len(), ratio(&q.qvalues)?);

    for scope in [PruneScope::PerTensor, PruneScope::PerRow] {
        for sparsity in [0.1, 0.2, 0.4] {
            let p = prune(&q, &stats, &PruneConfig::new(sparsity, scope)?)?;
            println!(
                "{scope:?} {sparsity:.1}: {} zeros, CR {:.4}",
                zeros(&p.qvalues),
                ratio(&p.qvalues)?
            );
        }
    }
    Ok(())
}
