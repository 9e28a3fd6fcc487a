//! Writing and reading the weights and statistics files that an external
//! exporter produces.
//!
//! cargo run --release --example dcwt_interchange

use dcomp::dcwt::{read_stats, read_weights, write_stats, write_weights, DType};
use dcomp::synth::{synth_layers, SynthSpec};

fn main() -> dcomp::Result<()> {
    let dir = std::env::temp_dir();
    let (wp, sp) = (dir.join("dcomp-example.dcwt"), dir.join("dcomp-example-stats.json"));
    let spec = SynthSpec { rows: 32, cols: 16, ..SynthSpec::default() };
    let (weights, stats): (Vec<_>, Vec<_>) = synth_layers(&spec, 2, 1)?.into_iter().unzip();

    write_weights(&wp, &weights, DType::F32)?;
    write_stats(&sp, &stats)?;
    let back = read_weights(&wp)?;
    let back_stats = read_stats(&sp)?;
    for w in &back {
        println!("{} {}x{}, {} channel maxima", w.name(), w.rows(), w.cols(), back_stats[w.name()].len());
    }
    println!("{} bytes of weights", std::fs::metadata(&wp)?.len());
    std::fs::remove_file(wp)?;
    std::fs::remove_file(sp)?;
    Ok(())
}
