//! Latency model and speed-adaptive partial compression.
//!
//! Fits the decompression curve to two measured points, compares memory
//! architectures, then asks the planner for the most compressed plan that
//! stays within 10% of the uncompressed latency.
//!
//! cargo run --release --example latency_planner

use dcomp::latency::{
    choose_architecture, fit_decompression_curve, footprint_ratio, latency, plan_partial, Architecture,
    CompressionPlan, HardwareProfile,
};

fn main() -> dcomp::Result<()> {
    let (d_max, c_sat) = fit_decompression_curve(&[(48e6, 97.76), (300e6, 156.08)])?;
    println!("fitted curve: D_max {d_max:.2} GB/s, saturating at {:.1} MB", c_sat / 1e6);

    let h = HardwareProfile {
        b_stoc: 3.0,
        b_ctog: 25.0,
        b_gpu: 768.0,
        d_max,
        c_sat,
        i_gpu: 100.0,
        mem_gpu: 48e9,
        mem_cpu: 64e9,
    };
    let (s, n, cr) = (16u64 << 20, 400, 2.2);
    let crs = vec![cr; n];
    let dense = CompressionPlan::all_compressed(s, n);
    for arch in Architecture::ALL {
        let r = latency(&h, &dense, arch, &crs)?;
        println!("{arch:?}: {:.2} ms per sample, bound by {:?}", r.per_sample_latency * 1e3, r.bottleneck);
    }
    let arch = choose_architecture(&h, n as f64 * s as f64 / cr, s as f64);
    println!("model fits: {arch:?}");

    let store = latency(&h, &CompressionPlan::all_store(s, n), arch, &crs)?.per_sample_latency;
    let out = plan_partial(&h, arch, n, s, cr, store * 1.1)?;
    println!(
        "budget {:.2} ms -> block size {:?}, {:.2} ms, weights at {:.1}% of uncompressed",
        store * 1.1e3,
        out.plan.block_size,
        out.report.per_sample_latency * 1e3,
        100.0 * footprint_ratio(&out.plan, &crs)?
    );
    Ok(())
}
