//! Per-sample inference latency of a chunk-compressed model, and the
//! speed-adaptive planner that picks how many chunks to keep compressed.
//!
//! Inference streams the weights chunk by chunk through three pipelined
//! stages: loading (bounded by the slowest link on the path), decompression
//! (only for compressed chunks) and compute. With perfect pipelining the
//! per-sample latency is the largest of the three stage totals; for a plan
//! where every chunk is treated alike this is
//! `max(S/B_loading, S/D, S/I) * N`.
//!
//! Compressing only the last chunk of every block of `N` chunks cuts the
//! decompression stage to `1/N` of the fully compressed plan while keeping
//! part of the memory saving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per GB; all rates are GB/s.
pub const GB: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Storage to CPU bandwidth, GB/s.
    #[serde(rename = "B_stoc")]
    pub b_stoc: f64,
    /// CPU to GPU bandwidth, GB/s.
    #[serde(rename = "B_ctog")]
    pub b_ctog: f64,
    /// GPU memory access bandwidth, GB/s.
    #[serde(rename = "B_gpu")]
    pub b_gpu: f64,
    /// Peak decompression throughput, GB/s.
    #[serde(rename = "D_max")]
    pub d_max: f64,
    /// Chunk size (bytes) at which decompression reaches `D_max`.
    pub c_sat: f64,
    /// Weight computation throughput, GB/s.
    #[serde(rename = "I_gpu")]
    pub i_gpu: f64,
    pub mem_gpu: f64,
    pub mem_cpu: f64,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("B_stoc", self.b_stoc),
            ("B_ctog", self.b_ctog),
            ("B_gpu", self.b_gpu),
            ("D_max", self.d_max),
            ("I_gpu", self.i_gpu),
            ("c_sat", self.c_sat),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mem_gpu", self.mem_gpu), ("mem_cpu", self.mem_cpu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Where the (compressed) model lives while inference runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Uncompressed model resident in GPU memory.
    GpuOnly,
    /// Compressed model plus a decompression buffer in GPU memory.
    GpuBuffer,
    /// Compressed model split across GPU and CPU memory.
    GpuCpu,
    /// Compressed model streamed from storage.
    Storage,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::GpuOnly,
        Architecture::GpuBuffer,
        Architecture::GpuCpu,
        Architecture::Storage,
    ];

    fn tier(self) -> u8 {
        match self {
            Architecture::GpuOnly | Architecture::GpuBuffer => 0,
            Architecture::GpuCpu => 1,
            Architecture::Storage => 2,
        }
    }
}

/// Effective loading bandwidth (GB/s): the slowest link on the path.
pub fn effective_loading(h: &HardwareProfile, arch: Architecture) -> f64 {
    match arch {
        Architecture::GpuOnly | Architecture::GpuBuffer => h.b_gpu,
        Architecture::GpuCpu => h.b_ctog.min(h.b_gpu),
        Architecture::Storage => h.b_stoc.min(h.b_ctog).min(h.b_gpu),
    }
}

/// Decompression throughput (GB/s) for a chunk size, saturating-linear in size.
pub fn d_gpu(h: &HardwareProfile, chunk_size: f64) -> f64 {
    h.d_max * (chunk_size / h.c_sat).min(1.0)
}

/// Least-squares fit of `D(c) = min(D_max, D_max * c / c_sat)` to measured
/// `(chunk bytes, GB/s)` points. Returns `(D_max, c_sat)`.
pub fn fit_decompression_curve(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.iter().any(|&(c, d)| !(c > 0.0 && d > 0.0)) {
        return Err(Error::InvalidParameter("curve points must be positive".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();

    let mut best: Option<(f64, f64, f64)> = None;
    // first k points on the linear ramp, the rest saturated
    for k in 0..=n {
        let (lin, sat) = pts.split_at(k);
        let slope = if lin.is_empty() {
            None
        } else {
            let sxy: f64 = lin.iter().map(|(c, d)| c * d).sum();
            let sxx: f64 = lin.iter().map(|(c, _)| c * c).sum();
            Some(sxy / sxx)
        };
        let (d_max, c_sat) = match (slope, sat.is_empty()) {
            (Some(m), true) => (m * lin[k - 1].0, lin[k - 1].0),
            (None, false) => (sat.iter().map(|p| p.1).sum::<f64>() / sat.len() as f64, sat[0].0),
            (Some(m), false) => {
                let d_max = sat.iter().map(|p| p.1).sum::<f64>() / sat.len() as f64;
                let c_sat = d_max / m;
                if c_sat < lin[k - 1].0 || c_sat > sat[0].0 {
                    continue;
                }
                (d_max, c_sat)
            }
            (None, true) => unreachable!("n > 0"),
        };
        let sse: f64 = pts
            .iter()
            .map(|&(c, d)| {
                let fit = d_max * (c / c_sat).min(1.0);
                (fit - d) * (fit - d)
            })
            .sum();
        if best.is_none_or(|b| sse < b.0) {
            best = Some((sse, d_max, c_sat));
        }
    }
    let (_, d_max, c_sat) = best.ok_or_else(|| Error::Internal("no consistent curve fit".into()))?;
    Ok((d_max, c_sat))
}

/// Which chunks of the serialized weight stream are stored compressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    /// Bytes per chunk.
    pub chunk_size: u64,
    pub n_chunks: usize,
    /// Chunks per block when built by the block rule; `None` for plans
    /// with no compressed chunk or a hand-made mask.
    pub block_size: Option<usize>,
    pub compressed_mask: Vec<bool>,
    /// Chunks the decompression buffer holds.
    #[serde(default = "one")]
    pub buffer_chunks: usize,
}

fn one() -> usize {
    1
}

impl CompressionPlan {
    /// Compresses the last chunk of every complete block of `block_size` chunks.
    pub fn block_rule(chunk_size: u64, n_chunks: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidParameter("block size must be at least 1".into()));
        }
        let compressed_mask = (0..n_chunks).map(|i| i % block_size == block_size - 1).collect();
        Ok(Self { chunk_size, n_chunks, block_size: Some(block_size), compressed_mask, buffer_chunks: 1 })
    }

    pub fn all_compressed(chunk_size: u64, n_chunks: usize) -> Self {
        Self::block_rule(chunk_size, n_chunks, 1).expect("block size 1 is valid")
    }

    pub fn all_store(chunk_size: u64, n_chunks: usize) -> Self {
        Self {
            chunk_size,
            n_chunks,
            block_size: None,
            compressed_mask: vec![false; n_chunks],
            buffer_chunks: 1,
        }
    }

    pub fn from_mask(chunk_size: u64, mask: Vec<bool>) -> Self {
        Self {
            chunk_size,
            n_chunks: mask.len(),
            block_size: None,
            compressed_mask: mask,
            buffer_chunks: 1,
        }
    }

    pub fn compressed_count(&self) -> usize {
        self.compressed_mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of chunks stored compressed.
    pub fn compressed_fraction(&self) -> f64 {
        if self.n_chunks == 0 {
            0.0
        } else {
            self.compressed_count() as f64 / self.n_chunks as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.compressed_mask.len() != self.n_chunks {
            return Err(Error::PlanMismatch { plan: self.compressed_mask.len(), chunks: self.n_chunks });
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidParameter("chunk size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Loading,
    Decompression,
    Compute,
}

/// Total busy time of each pipeline stage, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub loading: f64,
    pub decompression: f64,
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub architecture: Architecture,
    /// Seconds.
    pub per_sample_latency: f64,
    pub bottleneck: Bottleneck,
    pub stages: StageTimes,
    pub memory_used_gpu: f64,
    pub memory_used_cpu: f64,
}

fn check_cr(plan: &CompressionPlan, cr_per_chunk: &[f64]) -> Result<()> {
    plan.validate()?;
    if cr_per_chunk.len() != plan.n_chunks {
        return Err(Error::DimensionMismatch(format!(
            "{} compression ratios for {} chunks",
            cr_per_chunk.len(),
            plan.n_chunks
        )));
    }
    if let Some(i) = cr_per_chunk.iter().position(|&c| !(c.is_finite() && c >= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "compression ratio of chunk {i} is {}, must be >= 1",
            cr_per_chunk[i]
        )));
    }
    Ok(())
}

/// Stage totals for a plan. Compressed chunks travel compressed over the
/// loading path; stored chunks travel raw and skip decompression.
pub fn stage_times(
    h: &HardwareProfile,
    plan: &CompressionPlan,
    arch: Architecture,
    cr_per_chunk: &[f64],
) -> Result<StageTimes> {
    h.validate()?;
    check_cr(plan, cr_per_chunk)?;
    let s = plan.chunk_size as f64;
    let loaded: f64 = plan
        .compressed_mask
        .iter()
        .zip(cr_per_chunk)
        .map(|(&m, &cr)| if m { s / cr } else { s })
        .sum();
    let decomp_per_chunk = s / (d_gpu(h, s) * GB);
    Ok(StageTimes {
        loading: loaded / (effective_loading(h, arch) * GB),
        decompression: plan.compressed_count() as f64 * decomp_per_chunk,
        compute: plan.n_chunks as f64 * s / (h.i_gpu * GB),
    })
}

pub fn latency(
    h: &HardwareProfile,
    plan: &CompressionPlan,
    arch: Architecture,
    cr_per_chunk: &[f64],
) -> Result<LatencyReport> {
    let stages = stage_times(h, plan, arch, cr_per_chunk)?;
    let (bottleneck, total) = [
        (Bottleneck::Loading, stages.loading),
        (Bottleneck::Decompression, stages.decompression),
        (Bottleneck::Compute, stages.compute),
    ]
    .into_iter()
    .fold((Bottleneck::Loading, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });

    let mem = memory_footprint(plan, cr_per_chunk)?;
    let resident = mem.total();
    let (gpu, cpu) = match arch {
        Architecture::GpuOnly | Architecture::GpuBuffer => (resident, 0.0),
        Architecture::GpuCpu => {
            let gpu = resident.min(h.mem_gpu);
            (gpu, resident - gpu)
        }
        Architecture::Storage => {
            let gpu = resident.min(h.mem_gpu);
            (gpu, (resident - gpu).min(h.mem_cpu))
        }
    };

    if !(total > 0.0) {
        return Err(Error::InvalidParameter("plan has no chunks".into()));
    }
    Ok(LatencyReport {
        architecture: arch,
        per_sample_latency: total,
        bottleneck,
        stages,
        memory_used_gpu: gpu,
        memory_used_cpu: cpu,
    })
}

/// Smallest-latency architecture the compressed model fits.
pub fn choose_architecture(h: &HardwareProfile, model_bytes_compressed: f64, buffer_bytes: f64) -> Architecture {
    let need = model_bytes_compressed + buffer_bytes;
    if need <= h.mem_gpu {
        Architecture::GpuBuffer
    } else if need <= h.mem_gpu + h.mem_cpu {
        Architecture::GpuCpu
    } else {
        Architecture::Storage
    }
}

/// True when `a` is a slower tier than `b`.
pub fn slower_tier(a: Architecture, b: Architecture) -> bool {
    a.tier() > b.tier()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    /// Resident weight bytes: compressed chunks at `S/cr`, stored chunks at `S`.
    pub weights: f64,
    pub buffer: f64,
}

impl MemoryFootprint {
    pub fn total(&self) -> f64 {
        self.weights + self.buffer
    }
}

pub fn memory_footprint(plan: &CompressionPlan, cr_per_chunk: &[f64]) -> Result<MemoryFootprint> {
    check_cr(plan, cr_per_chunk)?;
    let s = plan.chunk_size as f64;
    let weights = plan
        .compressed_mask
        .iter()
        .zip(cr_per_chunk)
        .map(|(&m, &cr)| if m { s / cr } else { s })
        .sum();
    Ok(MemoryFootprint { weights, buffer: plan.buffer_chunks as f64 * s })
}

/// Weight bytes relative to the uncompressed stream: `1 - f (1 - 1/cr)` for
/// a fraction `f` compressed at a uniform ratio.
pub fn footprint_ratio(plan: &CompressionPlan, cr_per_chunk: &[f64]) -> Result<f64> {
    let m = memory_footprint(plan, cr_per_chunk)?;
    Ok(m.weights / (plan.n_chunks as f64 * plan.chunk_size as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: CompressionPlan,
    pub feasible: bool,
    pub report: LatencyReport,
}

/// Picks the block-rule plan with the most compression whose latency fits
/// the budget.
///
/// Block sizes `1..=n_chunks` are searched in increasing order; the first
/// that meets `latency_budget` wins. If none does, the all-store plan is
/// returned, flagged infeasible when it misses the budget too.
pub fn plan_partial(
    h: &HardwareProfile,
    arch: Architecture,
    n_chunks: usize,
    chunk_size: u64,
    cr_estimate: f64,
    latency_budget: f64,
) -> Result<PlanOutcome> {
    if !(latency_budget > 0.0) {
        return Err(Error::InvalidParameter(format!("latency budget {latency_budget} must be positive")));
    }
    if n_chunks == 0 {
        return Err(Error::InvalidParameter("nothing to plan: zero chunks".into()));
    }
    let cr = vec![cr_estimate; n_chunks];
    for block in 1..=n_chunks {
        let plan = CompressionPlan::block_rule(chunk_size, n_chunks, block)?;
        let report = latency(h, &plan, arch, &cr)?;
        if report.per_sample_latency <= latency_budget {
            return Ok(PlanOutcome { plan, feasible: true, report });
        }
    }
    let plan = CompressionPlan::all_store(chunk_size, n_chunks);
    let report = latency(h, &plan, arch, &cr)?;
    Ok(PlanOutcome { feasible: report.per_sample_latency <= latency_budget, plan, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> HardwareProfile {
        HardwareProfile {
            b_stoc: 3.0,
            b_ctog: 25.0,
            b_gpu: 600.0,
            d_max: 156.0,
            c_sat: 77e6,
            i_gpu: 80.0,
            mem_gpu: 45e9,
            mem_cpu: 64e9,
        }
    }

    #[test]
    fn loading_is_min_over_path() {
        let h = profile();
        assert_eq!(effective_loading(&h, Architecture::Storage), 3.0);
        assert_eq!(effective_loading(&h, Architecture::GpuCpu), 25.0);
        assert_eq!(effective_loading(&h, Architecture::GpuOnly), 600.0);
        assert_eq!(effective_loading(&h, Architecture::GpuBuffer), 600.0);
        let eq = HardwareProfile { b_stoc: 7.0, b_ctog: 7.0, b_gpu: 7.0, ..h };
        for a in Architecture::ALL {
            assert_eq!(effective_loading(&eq, a), 7.0);
        }
    }

    #[test]
    fn decompression_curve_saturates() {
        let h = profile();
        assert_eq!(d_gpu(&h, 2.0 * h.c_sat), h.d_max);
        assert_eq!(d_gpu(&h, h.c_sat), h.d_max);
        assert_eq!(d_gpu(&h, h.c_sat / 2.0), h.d_max / 2.0);
    }

    #[test]
    fn curve_fit_through_two_points() {
        let (d_max, c_sat) = fit_decompression_curve(&[(48.05e6, 97.76), (300.16e6, 156.08)]).unwrap();
        assert!((d_max - 156.08).abs() < 1e-9);
        assert!((c_sat - 48.05e6 * 156.08 / 97.76).abs() < 1.0);
        assert!((c_sat / 1e6 - 76.7).abs() < 0.1);
    }

    #[test]
    fn architecture_tiers() {
        let h = profile();
        assert_eq!(choose_architecture(&h, 4e9, 16e6), Architecture::GpuBuffer);
        assert_eq!(choose_architecture(&h, 60e9, 16e6), Architecture::GpuCpu);
        assert_eq!(choose_architecture(&h, 200e9, 16e6), Architecture::Storage);
    }

    #[test]
    fn footprint_examples() {
        let s = 1 << 20;
        let plan = CompressionPlan::all_store(s, 10);
        let m = memory_footprint(&plan, &[1.0; 10]).unwrap();
        assert_eq!(m.total(), 11.0 * s as f64);
        let plan = CompressionPlan::all_compressed(s, 10);
        let m = memory_footprint(&plan, &[2.0; 10]).unwrap();
        assert_eq!(m.total(), 5.0 * s as f64 + s as f64);
    }

    #[test]
    fn block_rule_marks_last_of_each_complete_block() {
        let p = CompressionPlan::block_rule(4096, 7, 3).unwrap();
        assert_eq!(p.compressed_mask, vec![false, false, true, false, false, true, false]);
        assert!(CompressionPlan::block_rule(4096, 7, 0).is_err());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let p = CompressionPlan::all_store(4096, 3);
        assert!(latency(&profile(), &p, Architecture::GpuBuffer, &[1.0; 2]).is_err());
        assert!(latency(&profile(), &p, Architecture::GpuBuffer, &[1.0, 0.5, 1.0]).is_err());
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(profile()).unwrap();
        for key in ["B_stoc", "B_ctog", "B_gpu", "D_max", "c_sat", "I_gpu", "mem_gpu", "mem_cpu"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let plan: CompressionPlan = serde_json::from_str(
            r#"{"chunk_size":4096,"n_chunks":2,"block_size":null,"compressed_mask":[true,false]}"#,
        )
        .unwrap();
        assert_eq!(plan.buffer_chunks, 1);
    }
}
