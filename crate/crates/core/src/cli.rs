//! The `dcomp` command line.
//!
//! Every subcommand is a thin composition of library calls. Reports go to
//! stdout as aligned text, or as JSON with `--json`. Exit codes: 0 success,
//! 2 usage error, 3 data or format error, 4 internal invariant violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::bench::{bench_codecs_with, BenchOptions};
use crate::codec::container::{DEFAULT_CHUNK_SIZE, MIN_CHUNK_SIZE};
use crate::codec::{chunked_ans_size, pack, unpack, ChunkPlan, CodecId, CompressedModel, PackedModel};
use crate::dcwt::{self, DType};
use crate::error::{Error, Result};
use crate::latency::{
    choose_architecture, latency, memory_footprint, plan_partial, Architecture, CompressionPlan,
    HardwareProfile, LatencyReport,
};
use crate::prune::{prune, PruneConfig, PruneScope};
use crate::quant::{analyze_quantized, scale_and_quantize, simulate_layer, QuantizedTensor};
use crate::synth::{synth_activations, synth_layers, SynthSpec};
use crate::tensor::{analyze_float, ActivationStats, WeightTensor};

/// Default values of every pipeline knob, mirrored by `config/reference.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub sparsity: f64,
    pub scope: PruneScope,
    pub chunk_size: usize,
    pub block_size: usize,
    pub codec: CodecId,
    pub seed: u64,
    pub sweep_steps: usize,
    pub sweep_tokens: usize,
    pub cr_estimate: f64,
    pub bench_mib: usize,
    pub synth: SynthSpec,
    pub synth_layers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            sparsity: 0.2,
            scope: PruneScope::PerTensor,
            chunk_size: DEFAULT_CHUNK_SIZE,
            block_size: 1,
            codec: CodecId::Ans,
            seed: 42,
            sweep_steps: 10,
            sweep_tokens: 32,
            cr_estimate: 2.0,
            bench_mib: 64,
            synth: SynthSpec::default(),
            synth_layers: 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dcomp", version, about = "Scaled INT8 weight compression toolkit")]
pub struct Cli {
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic ensemble as DCWT weights plus stats JSON.
    Synth(SynthArgs),
    /// Scale and quantize DCWT weights into an uncompressed DCC1 container.
    Quantize(QuantizeArgs),
    /// Zero the lowest-scoring weights of a container.
    Prune(PruneArgs),
    /// Re-chunk a container and entropy-code some or all chunks.
    Pack(PackArgs),
    /// Decode a container back to all-store form, verifying every chunk.
    Unpack(UnpackArgs),
    /// Per-layer near-zero share, entropy and ANS compression ratio.
    Analyze(AnalyzeArgs),
    /// Compression ratio and throughput of each codec.
    Bench(BenchArgs),
    /// Per-sample latency of a compression plan on a hardware profile.
    Simulate(SimulateArgs),
    /// Sweep alpha and report compression ratio and layer error as CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_weights: PathBuf,
    #[arg(long)]
    pub out_stats: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 512)]
    pub rows: usize,
    #[arg(long, default_value_t = 512)]
    pub cols: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Value type written to the weights file.
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scaling exponent in [0, 1]; 0 disables scaling.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of weights to zero, in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub sparsity: f64,
    #[arg(long, value_enum, default_value_t = ScopeArg::PerTensor)]
    pub scope: ScopeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    PerTensor,
    PerRow,
}

impl From<ScopeArg> for PruneScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PerTensor => PruneScope::PerTensor,
            ScopeArg::PerRow => PruneScope::PerRow,
        }
    }
}

#[derive(Debug, Args)]
pub struct PackArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Bytes per chunk; defaults to the input's chunk size.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Compress only the last chunk of every block of this many chunks.
    #[arg(long, default_value_t = 1)]
    pub block_size: usize,
    #[arg(long, value_enum, default_value_t = CodecArg::Ans)]
    pub codec: CodecArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CodecArg {
    Store,
    Ans,
}

impl From<CodecArg> for CodecId {
    fn from(c: CodecArg) -> Self {
        match c {
            CodecArg::Store => CodecId::Store,
            CodecArg::Ans => CodecId::Ans,
        }
    }
}

#[derive(Debug, Args)]
pub struct UnpackArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// A DCC1 container or DCWT weights file.
    pub input: PathBuf,
    /// Chunk size for the ANS estimate; defaults to the container's.
    #[arg(long)]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark the int8 stream of this DCC1 container instead of synthetic data.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Size of the synthetic quantized stream in MiB.
    #[arg(long, default_value_t = 64)]
    pub size_mib: usize,
    /// Scaling exponent for the synthetic stream.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4 << 20)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Hardware profile JSON.
    #[arg(long)]
    pub profile: PathBuf,
    /// Plan JSON; alternative to a container or the synthetic flags.
    #[arg(long, conflicts_with = "container")]
    pub plan: Option<PathBuf>,
    /// Take the chunk layout and per-chunk ratios from a DCC1 container.
    #[arg(long)]
    pub container: Option<PathBuf>,
    #[arg(long)]
    pub n_chunks: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE as u64)]
    pub chunk_size: u64,
    #[arg(long, default_value_t = 1)]
    pub block_size: usize,
    /// Compression ratio assumed for compressed chunks without a container.
    #[arg(long, default_value_t = 2.0)]
    pub cr: f64,
    #[arg(long, value_enum, default_value_t = ArchArg::Auto)]
    pub arch: ArchArg,
    /// Latency budget in seconds; picks the most compressed plan that meets it.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Auto,
    GpuOnly,
    GpuBuffer,
    GpuCpu,
    Storage,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid intervals on [0, 1]; 10 gives 0.0, 0.1, ..., 1.0.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Synthetic calibration tokens per layer for the error column.
    #[arg(long, default_value_t = 32)]
    pub tokens: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for bad input data, 4 for internal invariant violations.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_internal() {
        4
    } else {
        3
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("DCOMP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("DCOMP_THREADS must be a positive integer, got `{v}`"))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, json, out),
        Command::Quantize(a) => cmd_quantize(a, json, out),
        Command::Prune(a) => cmd_prune(a, json, out),
        Command::Pack(a) => cmd_pack(a, json, out),
        Command::Unpack(a) => cmd_unpack(a, json, out),
        Command::Analyze(a) => cmd_analyze(a, json, out),
        Command::Bench(a) => cmd_bench(a, json, out),
        Command::Simulate(a) => cmd_simulate(a, json, out),
        Command::Sweep(a) => cmd_sweep(a, json, out),
    }
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn with_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| e.context(path.display().to_string()))
}

fn read_container(path: &Path) -> Result<CompressedModel> {
    with_path(CompressedModel::read(path), path)
}

fn unpack_file(path: &Path) -> Result<(CompressedModel, PackedModel)> {
    let file = read_container(path)?;
    let model = with_path(unpack(&file), path)?;
    Ok((file, model))
}

fn write_container(path: &Path, c: &CompressedModel) -> Result<()> {
    with_path(c.write(path), path)
}

#[derive(Debug, Serialize)]
struct WriteSummary {
    out: PathBuf,
    tensors: usize,
    stream_bytes: usize,
    file_bytes: usize,
    chunks: usize,
    compressed_chunks: usize,
    payload_ratio: f64,
}

fn summarize(path: &Path, c: &CompressedModel) -> WriteSummary {
    WriteSummary {
        out: path.to_path_buf(),
        tensors: c.tensors.len(),
        stream_bytes: c.stream_len(),
        file_bytes: c.to_bytes().len(),
        chunks: c.chunks.len(),
        compressed_chunks: c.codecs().iter().filter(|&&k| k == CodecId::Ans).count(),
        payload_ratio: c.payload_ratio(),
    }
}

fn print_summary(out: &mut dyn Write, s: &WriteSummary, json: bool) -> Result<()> {
    if json {
        return emit_json(out, s);
    }
    writeln!(
        out,
        "wrote {}: {} tensors, {} stream bytes, {} file bytes, {}/{} chunks compressed, payload ratio {:.6}",
        s.out.display(),
        s.tensors,
        s.stream_bytes,
        s.file_bytes,
        s.compressed_chunks,
        s.chunks,
        s.payload_ratio
    )?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec { rows: a.rows, cols: a.cols, ..Default::default() };
    let layers = synth_layers(&spec, a.layers, a.seed)?;
    let (weights, stats): (Vec<_>, Vec<_>) = layers.into_iter().unzip();
    let dtype = match a.dtype {
        DTypeArg::F32 => DType::F32,
        DTypeArg::F64 => DType::F64,
    };
    with_path(dcwt::write_weights(&a.out_weights, &weights, dtype), &a.out_weights)?;
    with_path(dcwt::write_stats(&a.out_stats, &stats), &a.out_stats)?;
    if json {
        emit_json(out, &serde_json::json!({
            "weights": a.out_weights,
            "stats": a.out_stats,
            "layers": a.layers,
            "rows": a.rows,
            "cols": a.cols,
            "seed": a.seed,
        }))
    } else {
        writeln!(
            out,
            "wrote {} layers of {}x{} (seed {}) to {} and {}",
            a.layers,
            a.rows,
            a.cols,
            a.seed,
            a.out_weights.display(),
            a.out_stats.display()
        )?;
        Ok(())
    }
}

fn load_inputs(weights: &Path, stats: &Path) -> Result<Vec<(WeightTensor, ActivationStats)>> {
    let ws = with_path(dcwt::read_weights(weights), weights)?;
    let mut ss = with_path(dcwt::read_stats(stats), stats)?;
    ws.into_iter()
        .map(|w| {
            let s = ss.remove(w.name()).ok_or_else(|| Error::MissingStats(w.name().to_string()))?;
            Ok((w, s))
        })
        .collect()
}

/// Scales and quantizes every tensor at `alpha`, in input order.
pub fn quantize_all(inputs: &[(WeightTensor, ActivationStats)], alpha: f64) -> Result<Vec<QuantizedTensor>> {
    inputs
        .par_iter()
        .map(|(w, s)| scale_and_quantize(w, s, alpha).map_err(|e| e.context(format!("tensor `{}`", w.name()))))
        .collect()
}

fn cmd_quantize(a: &QuantizeArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let inputs = load_inputs(&a.weights, &a.stats)?;
    let tensors = quantize_all(&inputs, a.alpha)?;
    let file = pack(&PackedModel::new(tensors), a.chunk_size, &ChunkPlan::Uniform(CodecId::Store))?;
    write_container(&a.out, &file)?;
    print_summary(out, &summarize(&a.out, &file), json)
}

fn cmd_prune(a: &PruneArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = PruneConfig::new(a.sparsity, a.scope.into())?;
    let (file, model) = unpack_file(&a.input)?;
    let stats = with_path(dcwt::read_stats(&a.stats), &a.stats)?;

    #[derive(Serialize)]
    struct Row {
        name: String,
        entries: usize,
        zeros_before: usize,
        zeros_after: usize,
    }
    let zeros = |q: &QuantizedTensor| q.qvalues.iter().filter(|&&v| v == 0).count();
    let pruned = model
        .tensors
        .par_iter()
        .map(|q| {
            let s = stats.get(&q.name).ok_or_else(|| Error::MissingStats(q.name.clone()))?;
            let p = prune(q, s, &cfg).map_err(|e| e.context(format!("tensor `{}`", q.name)))?;
            let row = Row { name: q.name.clone(), entries: q.len(), zeros_before: zeros(q), zeros_after: zeros(&p) };
            Ok((p, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let (tensors, rows): (Vec<_>, Vec<_>) = pruned.into_iter().unzip();

    let new = pack(&PackedModel::new(tensors), file.chunk_size, &ChunkPlan::Uniform(CodecId::Store))?;
    write_container(&a.out, &new)?;
    if json {
        return emit_json(out, &serde_json::json!({ "tensors": rows, "out": a.out }));
    }
    writeln!(out, "{:<24} {:>12} {:>12} {:>12}", "tensor", "entries", "zeros_before", "zeros_after")?;
    for r in &rows {
        writeln!(out, "{:<24} {:>12} {:>12} {:>12}", r.name, r.entries, r.zeros_before, r.zeros_after)?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn cmd_pack(a: &PackArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let (file, model) = unpack_file(&a.input)?;
    let chunk_size = a.chunk_size.unwrap_or(file.chunk_size);
    if chunk_size < MIN_CHUNK_SIZE {
        return Err(Error::InvalidParameter(format!("chunk size must be at least {MIN_CHUNK_SIZE}")));
    }
    if a.block_size == 0 {
        return Err(Error::InvalidParameter("block size must be at least 1".into()));
    }
    let n = crate::codec::container::chunk_count(model.stream_len(), chunk_size);
    let plan = match (CodecId::from(a.codec), a.block_size) {
        (CodecId::Store, _) => ChunkPlan::Uniform(CodecId::Store),
        (CodecId::Ans, 1) => ChunkPlan::Uniform(CodecId::Ans),
        (CodecId::Ans, b) => ChunkPlan::last_of_block(n, b),
    };
    let new = pack(&model, chunk_size, &plan)?;
    write_container(&a.out, &new)?;
    print_summary(out, &summarize(&a.out, &new), json)
}

fn cmd_unpack(a: &UnpackArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let (file, model) = unpack_file(&a.input)?;
    let new = pack(&model, file.chunk_size, &ChunkPlan::Uniform(CodecId::Store))?;
    write_container(&a.out, &new)?;
    print_summary(out, &summarize(&a.out, &new), json)
}

/// One row of an `analyze` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Int8 stream bytes of the layer.
    pub bytes: u64,
    /// Chunked ANS size of those bytes.
    pub compressed_bytes: u64,
    pub cr: f64,
    pub near_zero_fraction: f64,
    /// Bits per value.
    pub entropy: f64,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub bytes: u64,
    pub compressed_bytes: u64,
    pub cr: f64,
    pub near_zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub format: String,
    pub chunk_size: usize,
    pub layers: Vec<LayerReport>,
    pub totals: Totals,
}

impl AnalyzeReport {
    fn new(format: &str, chunk_size: usize, layers: Vec<LayerReport>) -> Result<Self> {
        let bytes: u64 = layers.iter().map(|l| l.bytes).sum();
        let compressed_bytes: u64 = layers.iter().map(|l| l.compressed_bytes).sum();
        let near: f64 = layers.iter().map(|l| l.near_zero_fraction * l.bytes as f64).sum();
        Ok(Self {
            format: format.into(),
            chunk_size,
            totals: Totals {
                bytes,
                compressed_bytes,
                cr: crate::tensor::compression_ratio(bytes, compressed_bytes)?,
                near_zero_fraction: near / bytes as f64,
            },
            layers,
        })
    }
}

fn int8_layer(q: &QuantizedTensor, chunk_size: usize) -> Result<LayerReport> {
    let d = analyze_quantized(q)?;
    let bytes = q.as_bytes();
    let compressed = chunked_ans_size(&bytes, chunk_size)?;
    Ok(LayerReport {
        name: q.name.clone(),
        rows: q.rows,
        cols: q.cols,
        bytes: bytes.len() as u64,
        compressed_bytes: compressed,
        cr: crate::tensor::compression_ratio(bytes.len() as u64, compressed)?,
        near_zero_fraction: d.near_zero_fraction,
        entropy: d.byte_entropy,
        outliers: d.outlier_count,
    })
}

/// Per-layer report of quantized tensors.
pub fn analyze_tensors(tensors: &[QuantizedTensor], chunk_size: usize) -> Result<AnalyzeReport> {
    let layers = tensors
        .par_iter()
        .map(|q| int8_layer(q, chunk_size))
        .collect::<Result<Vec<_>>>()?;
    AnalyzeReport::new("dcc1", chunk_size, layers)
}

/// Float statistics per layer; the ratio is that of the unscaled INT8 baseline.
pub fn analyze_weights(weights: &[WeightTensor], chunk_size: usize) -> Result<AnalyzeReport> {
    let layers = weights
        .par_iter()
        .map(|w| {
            let f = analyze_float(w)?;
            let base = int8_layer(&crate::quant::quantize(w)?, chunk_size)?;
            Ok(LayerReport {
                near_zero_fraction: f.near_zero_fraction,
                entropy: f.byte_entropy,
                outliers: f.outlier_count,
                ..base
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AnalyzeReport::new("dcwt", chunk_size, layers)
}

fn cmd_analyze(a: &AnalyzeArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let bytes = with_path(std::fs::read(&a.input).map_err(Error::from), &a.input)?;
    let report = match bytes.get(..4) {
        Some(m) if m == dcwt::MAGIC => {
            let w = with_path(dcwt::decode_weights(&bytes), &a.input)?;
            analyze_weights(&w, a.chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE))?
        }
        _ => {
            let file = with_path(CompressedModel::from_bytes(&bytes), &a.input)?;
            let model = with_path(unpack(&file), &a.input)?;
            analyze_tensors(&model.tensors, a.chunk_size.unwrap_or(file.chunk_size))?
        }
    };
    if json {
        return emit_json(out, &report);
    }
    writeln!(
        out,
        "{:<24} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10} {:>8}",
        "layer", "shape", "bytes", "ans_bytes", "cr", "near_zero", "entropy", "outliers"
    )?;
    for l in &report.layers {
        writeln!(
            out,
            "{:<24} {:>10} {:>12} {:>12} {:>10.6} {:>10.6} {:>10.6} {:>8}",
            l.name,
            format!("{}x{}", l.rows, l.cols),
            l.bytes,
            l.compressed_bytes,
            l.cr,
            l.near_zero_fraction,
            l.entropy,
            l.outliers
        )?;
    }
    let t = &report.totals;
    writeln!(
        out,
        "{:<24} {:>10} {:>12} {:>12} {:>10.6} {:>10.6}",
        "total", "", t.bytes, t.compressed_bytes, t.cr, t.near_zero_fraction
    )?;
    Ok(())
}

/// Quantized synthetic layers of 2048 x 2048 until `bytes` are filled.
pub fn synthetic_stream(bytes: usize, alpha: f64, seed: u64) -> Result<Vec<u8>> {
    const SIDE: usize = 2048;
    let layers = bytes.div_ceil(SIDE * SIDE).max(1);
    let spec = SynthSpec { rows: SIDE, cols: SIDE, ..Default::default() };
    let inputs = synth_layers(&spec, layers, seed)?;
    let q = quantize_all(&inputs, alpha)?;
    let mut stream = PackedModel::new(q).stream();
    stream.truncate(bytes);
    Ok(stream)
}

fn cmd_bench(a: &BenchArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let data = match &a.input {
        Some(p) => unpack_file(p)?.1.stream(),
        None => synthetic_stream(a.size_mib << 20, a.alpha, a.seed)?,
    };
    let opts = BenchOptions { chunk_size: a.chunk_size.max(1), repetitions: a.repetitions };
    let rows = bench_codecs_with(&data, &opts)?;
    if json {
        return emit_json(out, &serde_json::json!({ "bytes": data.len(), "chunk_size": opts.chunk_size, "rows": rows }));
    }
    writeln!(out, "{} bytes, chunk size {}; throughput columns are timings and vary run to run", data.len(), opts.chunk_size)?;
    writeln!(out, "{:<8} {:>10} {:>22} {:>24}", "codec", "ratio", "compress_MB/s (timing)", "decompress_MB/s (timing)")?;
    for r in &rows {
        writeln!(out, "{:<8} {:>10.6} {:>22.1} {:>24.1}", r.codec.name(), r.ratio, r.compress_mb_s, r.decompress_mb_s)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    plan: CompressionPlan,
    feasible: bool,
    report: LatencyReport,
}

fn resolve_arch(arg: ArchArg, h: &HardwareProfile, plan: &CompressionPlan, cr: &[f64]) -> Result<Architecture> {
    Ok(match arg {
        ArchArg::Auto => {
            let m = memory_footprint(plan, cr)?;
            choose_architecture(h, m.weights, m.buffer)
        }
        ArchArg::GpuOnly => Architecture::GpuOnly,
        ArchArg::GpuBuffer => Architecture::GpuBuffer,
        ArchArg::GpuCpu => Architecture::GpuCpu,
        ArchArg::Storage => Architecture::Storage,
    })
}

fn cmd_simulate(a: &SimulateArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let text = with_path(std::fs::read_to_string(&a.profile).map_err(Error::from), &a.profile)?;
    let h: HardwareProfile = with_path(serde_json::from_str(&text).map_err(Error::from), &a.profile)?;
    with_path(h.validate(), &a.profile)?;

    let (plan, cr): (CompressionPlan, Vec<f64>) = if let Some(p) = &a.plan {
        let text = with_path(std::fs::read_to_string(p).map_err(Error::from), p)?;
        let plan: CompressionPlan = with_path(serde_json::from_str(&text).map_err(Error::from), p)?;
        with_path(plan.validate(), p)?;
        let cr = plan.compressed_mask.iter().map(|&m| if m { a.cr } else { 1.0 }).collect();
        (plan, cr)
    } else if let Some(p) = &a.container {
        let file = read_container(p)?;
        let mask: Vec<bool> = file.codecs().iter().map(|&c| c == CodecId::Ans).collect();
        let cr = file
            .chunks
            .iter()
            .map(|c| if c.codec == CodecId::Ans { c.uncompressed_len as f64 / c.payload.len() as f64 } else { 1.0 })
            .collect();
        (CompressionPlan::from_mask(file.chunk_size as u64, mask), cr)
    } else {
        let n = a.n_chunks.ok_or_else(|| {
            Error::InvalidParameter("give --plan, --container or --n-chunks".into())
        })?;
        let plan = CompressionPlan::block_rule(a.chunk_size, n, a.block_size)?;
        let cr = plan.compressed_mask.iter().map(|&m| if m { a.cr } else { 1.0 }).collect();
        (plan, cr)
    };

    let result = match a.budget {
        None => {
            let arch = resolve_arch(a.arch, &h, &plan, &cr)?;
            let report = latency(&h, &plan, arch, &cr)?;
            SimulateOutput { plan, feasible: true, report }
        }
        Some(budget) => {
            let compressed: Vec<&f64> = cr.iter().zip(&plan.compressed_mask).filter(|(_, &m)| m).map(|(c, _)| c).collect();
            let estimate = if compressed.is_empty() || a.container.is_none() {
                a.cr
            } else {
                compressed.iter().copied().sum::<f64>() / compressed.len() as f64
            };
            let dense = CompressionPlan::all_compressed(plan.chunk_size, plan.n_chunks);
            let arch = resolve_arch(a.arch, &h, &dense, &vec![estimate; plan.n_chunks])?;
            let o = plan_partial(&h, arch, plan.n_chunks, plan.chunk_size, estimate, budget)?;
            if !o.feasible {
                eprintln!(
                    "warning: no plan meets the {budget} s budget; even all-store takes {} s",
                    o.report.per_sample_latency
                );
            }
            SimulateOutput { plan: o.plan, feasible: o.feasible, report: o.report }
        }
    };

    if json {
        return emit_json(out, &result);
    }
    let r = &result.report;
    let block = result.plan.block_size.map_or("none".to_string(), |b| b.to_string());
    writeln!(out, "architecture        {}", serde_json::to_value(r.architecture)?.as_str().unwrap_or("?"))?;
    writeln!(out, "chunks              {} x {} bytes, {} compressed", result.plan.n_chunks, result.plan.chunk_size, result.plan.compressed_count())?;
    writeln!(out, "block_size          {block}")?;
    writeln!(out, "feasible            {}", result.feasible)?;
    writeln!(out, "per_sample_latency  {:.9e} s", r.per_sample_latency)?;
    writeln!(out, "bottleneck          {}", serde_json::to_value(r.bottleneck)?.as_str().unwrap_or("?"))?;
    writeln!(out, "loading             {:.9e} s", r.stages.loading)?;
    writeln!(out, "decompression       {:.9e} s", r.stages.decompression)?;
    writeln!(out, "compute             {:.9e} s", r.stages.compute)?;
    writeln!(out, "memory_used_gpu     {:.0} bytes", r.memory_used_gpu)?;
    writeln!(out, "memory_used_cpu     {:.0} bytes", r.memory_used_cpu)?;
    Ok(())
}

/// One alpha of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub cr: f64,
    pub near_zero: f64,
    /// Mean relative output error of the scaled INT8 layers.
    pub layer_error: f64,
}

/// Compression ratio, near-zero share and layer error at each alpha.
pub fn sweep(
    inputs: &[(WeightTensor, ActivationStats)],
    alphas: &[f64],
    tokens: usize,
    seed: u64,
    chunk_size: usize,
) -> Result<Vec<SweepRow>> {
    let samples = inputs
        .iter()
        .enumerate()
        .map(|(i, (_, s))| synth_activations(s, tokens, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    alphas
        .iter()
        .map(|&alpha| {
            let q = quantize_all(inputs, alpha)?;
            let report = analyze_tensors(&q, chunk_size)?;
            let errors = inputs
                .par_iter()
                .zip(&samples)
                .map(|((w, _), x)| simulate_layer(x, w, alpha).map(|r| r.quantized_error))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                alpha,
                cr: report.totals.cr,
                near_zero: report.totals.near_zero_fraction,
                layer_error: errors.iter().sum::<f64>() / errors.len() as f64,
            })
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if a.steps == 0 {
        return Err(Error::InvalidParameter("need at least one sweep step".into()));
    }
    let inputs = load_inputs(&a.weights, &a.stats)?;
    let alphas: Vec<f64> = (0..=a.steps).map(|i| i as f64 / a.steps as f64).collect();
    let rows = sweep(&inputs, &alphas, a.tokens, a.seed, a.chunk_size)?;

    let mut csv = String::from("alpha,cr,near_zero,layer_error\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.alpha, r.cr, r.near_zero, r.layer_error));
    }
    if let Some(p) = &a.out {
        with_path(std::fs::write(p, &csv).map_err(Error::from), p)?;
    }
    if json {
        emit_json(out, &rows)
    } else if a.out.is_none() {
        out.write_all(csv.as_bytes())?;
        Ok(())
    } else {
        writeln!(out, "wrote {} rows to {}", rows.len(), a.out.as_ref().unwrap().display())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_matches_defaults() {
        let text = include_str!("../config/reference.json");
        let cfg: PipelineConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn internal_errors_map_to_exit_four() {
        assert_eq!(exit_code(&Error::Internal("x".into())), 4);
        assert_eq!(exit_code(&Error::CorruptStream.context("f")), 3);
    }
}
