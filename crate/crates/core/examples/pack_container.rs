//! Pack quantized layers into a DCC1 file with all, some or no chunks
//! compressed, then read it back.
//!
//! cargo run --release --example pack_container

use dcomp::cli::quantize_all;
use dcomp::codec::container::chunk_count;
use dcomp::codec::{pack, unpack, ChunkPlan, CodecId, CompressedModel, PackedModel};
use dcomp::synth::{synth_layers, SynthSpec};

fn main() -> dcomp::Result<()> {
    let inputs = synth_layers(&SynthSpec::default(), 4, 42)?;
    let model = PackedModel::new(quantize_all(&inputs, 0.7)?);
    let chunk = 64 << 10;
    let n = chunk_count(model.stream_len(), chunk);
    let path = std::env::temp_dir().join("dcomp-example.dcc1");

    for (label, plan) in [
        ("all store", ChunkPlan::Uniform(CodecId::Store)),
        ("every 4th chunk", ChunkPlan::last_of_block(n, 4)),
        ("all ans", ChunkPlan::Uniform(CodecId::Ans)),
    ] {
        pack(&model, chunk, &plan)?.write(&path)?;
        let file = CompressedModel::read(&path)?;
        assert_eq!(unpack(&file)?, model);
        println!(
            "{label:<16} {n} chunks, file {} bytes, payload ratio {:.4}",
            std::fs::metadata(&path)?.len(),
            file.payload_ratio()
        );
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
