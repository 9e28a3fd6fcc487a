//! Compression ratio, near-zero share and layer error over the alpha grid.
//!
//! cargo run --release --example alpha_sweep > sweep.csv

use dcomp::cli::sweep;
use dcomp::codec::container::DEFAULT_CHUNK_SIZE;
use dcomp::quant::alpha_grid;
use dcomp::synth::{synth_layers, SynthSpec};

fn main() -> dcomp::Result<()> {
    let inputs = synth_layers(&SynthSpec::default(), 4, 42)?;
    println!("alpha,cr,near_zero,layer_error");
    for r in sweep(&inputs, &alpha_grid(), 32, 42, DEFAULT_CHUNK_SIZE)? {
        println!("{:.1},{:.4},{:.4},{:.5}", r.alpha, r.cr, r.near_zero, r.layer_error);
    }
    Ok(())
}
