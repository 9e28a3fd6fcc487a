use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcomp::cli::{AnalyzeReport, SweepRow};
use dcomp::codec::{pack, ChunkPlan, CodecId, CompressedModel, PackedModel};
use dcomp::latency::{latency, Architecture, CompressionPlan, HardwareProfile, LatencyReport};
use dcomp::quant::quantize;

fn dcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcomp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dcomp(args);
    assert!(
        out.status.success(),
        "dcomp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Three 64x256 synthetic layers.
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        ok(&[
            "synth",
            "--out-weights",
            ws.s("w.dcwt"),
            "--out-stats",
            ws.s("s.json"),
            "--layers",
            "3",
            "--rows",
            "64",
            "--cols",
            "256",
            "--seed",
            "7",
        ]);
        ws
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> &str {
        // leak is fine in tests: paths live for the whole run
        Box::leak(self.p(name).to_str().unwrap().to_string().into_boxed_str())
    }

    fn quantize(&self, alpha: &str, out: &str) {
        ok(&[
            "quantize",
            "--weights",
            self.s("w.dcwt"),
            "--stats",
            self.s("s.json"),
            "--alpha",
            alpha,
            "--chunk-size",
            "4096",
            "--out",
            self.s(out),
        ]);
    }

    fn analyze(&self, file: &str) -> AnalyzeReport {
        serde_json::from_str(&ok(&["analyze", self.s(file), "--json"])).unwrap()
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn quantize_is_deterministic_and_alpha_zero_is_the_int8_baseline() {
    let ws = Workspace::new();
    ws.quantize("0", "a.dcc1");
    ws.quantize("0", "b.dcc1");
    assert_eq!(read(&ws.p("a.dcc1")), read(&ws.p("b.dcc1")));

    let weights = dcomp::dcwt::read_weights(ws.p("w.dcwt")).unwrap();
    let baseline: Vec<_> = weights.iter().map(|w| quantize(w).unwrap()).collect();
    let file = pack(&PackedModel::new(baseline), 4096, &ChunkPlan::Uniform(CodecId::Store)).unwrap();
    assert_eq!(read(&ws.p("a.dcc1")), file.to_bytes());
}

#[test]
fn missing_stats_names_the_tensor() {
    let ws = Workspace::new();
    std::fs::write(ws.p("partial.json"), r#"{"layer.0": [1.0]}"#).unwrap();
    let out = dcomp(&[
        "quantize",
        "--weights",
        ws.s("w.dcwt"),
        "--stats",
        ws.s("partial.json"),
        "--out",
        ws.s("x.dcc1"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("layer.0") || err.contains("layer.1"), "{err}");
}

#[test]
fn pack_unpack_round_trip_and_partial_sizes() {
    let ws = Workspace::new();
    ws.quantize("0.5", "q.dcc1");
    ok(&["pack", ws.s("q.dcc1"), "--out", ws.s("all.dcc1")]);
    ok(&["pack", ws.s("q.dcc1"), "--out", ws.s("part.dcc1"), "--block-size", "4"]);
    ok(&["pack", ws.s("q.dcc1"), "--out", ws.s("none.dcc1"), "--codec", "store"]);
    ok(&["unpack", ws.s("all.dcc1"), "--out", ws.s("back.dcc1")]);
    ok(&["unpack", ws.s("part.dcc1"), "--out", ws.s("back2.dcc1")]);
    assert_eq!(read(&ws.p("back.dcc1")), read(&ws.p("q.dcc1")));
    assert_eq!(read(&ws.p("back2.dcc1")), read(&ws.p("q.dcc1")));

    let size = |n: &str| read(&ws.p(n)).len();
    assert!(size("all.dcc1") < size("part.dcc1"));
    assert!(size("part.dcc1") < size("none.dcc1"));
    let part = CompressedModel::read(ws.p("part.dcc1")).unwrap();
    for (i, c) in part.codecs().iter().enumerate() {
        assert_eq!(*c == CodecId::Ans, i % 4 == 3, "chunk {i}");
    }
}

#[test]
fn corrupted_payload_reports_the_chunk() {
    let ws = Workspace::new();
    ws.quantize("0.5", "q.dcc1");
    ok(&["pack", ws.s("q.dcc1"), "--out", ws.s("c.dcc1")]);
    let mut bytes = read(&ws.p("c.dcc1"));
    let n = bytes.len();
    bytes[n - 10] ^= 0x40;
    std::fs::write(ws.p("bad.dcc1"), &bytes).unwrap();
    let out = dcomp(&["unpack", ws.s("bad.dcc1"), "--out", ws.s("x.dcc1")]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    let last = CompressedModel::from_bytes(&read(&ws.p("c.dcc1"))).unwrap().chunks.len() - 1;
    assert!(err.contains(&format!("chunk {last}")), "{err}");
    assert!(!ws.p("x.dcc1").exists());
}

#[test]
fn analyze_totals_sum_layers_and_text_matches_json() {
    let ws = Workspace::new();
    ws.quantize("0.9", "q.dcc1");
    let r = ws.analyze("q.dcc1");
    assert_eq!(r.layers.len(), 3);
    assert_eq!(r.totals.bytes, r.layers.iter().map(|l| l.bytes).sum::<u64>());
    assert_eq!(r.totals.compressed_bytes, r.layers.iter().map(|l| l.compressed_bytes).sum::<u64>());
    assert!((r.totals.cr - r.totals.bytes as f64 / r.totals.compressed_bytes as f64).abs() < 1e-12);

    let text = ok(&["analyze", ws.s("q.dcc1")]);
    for l in &r.layers {
        let line = text.lines().find(|x| x.starts_with(&l.name)).unwrap();
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[2].parse::<u64>().unwrap(), l.bytes);
        assert_eq!(cols[3].parse::<u64>().unwrap(), l.compressed_bytes);
        assert_eq!(cols[4], format!("{:.6}", l.cr));
        assert_eq!(cols[5], format!("{:.6}", l.near_zero_fraction));
        assert_eq!(cols[6], format!("{:.6}", l.entropy));
    }
    let total = text.lines().find(|x| x.starts_with("total")).unwrap();
    assert!(total.contains(&format!("{:.6}", r.totals.cr)));
}

#[test]
fn scaling_improves_the_analyzed_ratio() {
    let ws = Workspace::new();
    ws.quantize("0", "a0.dcc1");
    ws.quantize("0.5", "a5.dcc1");
    assert!(ws.analyze("a5.dcc1").totals.cr > ws.analyze("a0.dcc1").totals.cr);

    let raw: AnalyzeReport =
        serde_json::from_str(&ok(&["analyze", ws.s("w.dcwt"), "--chunk-size", "4096", "--json"])).unwrap();
    assert_eq!(raw.format, "dcwt");
    assert_eq!(raw.totals.compressed_bytes, ws.analyze("a0.dcc1").totals.compressed_bytes);
}

#[test]
fn prune_zeroes_exactly_the_requested_count() {
    let ws = Workspace::new();
    ws.quantize("0", "q.dcc1");
    let same = ok(&["prune", ws.s("q.dcc1"), "--stats", ws.s("s.json"), "--sparsity", "0", "--out", ws.s("p0.dcc1")]);
    assert!(same.contains("wrote"));
    assert_eq!(read(&ws.p("p0.dcc1")), read(&ws.p("q.dcc1")));

    let json = ok(&[
        "--json", "prune", ws.s("q.dcc1"), "--stats", ws.s("s.json"), "--sparsity", "0.2", "--out", ws.s("p.dcc1"),
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for t in v["tensors"].as_array().unwrap() {
        let n = t["entries"].as_u64().unwrap();
        let before = t["zeros_before"].as_u64().unwrap();
        assert!(before < n / 5, "baseline already sparse");
        assert_eq!(t["zeros_after"].as_u64().unwrap(), n / 5);
    }
    assert!(ws.analyze("p.dcc1").totals.cr >= ws.analyze("q.dcc1").totals.cr);

    let out = dcomp(&["prune", ws.s("q.dcc1"), "--stats", ws.s("s.json"), "--sparsity", "1.5", "--out", ws.s("x.dcc1")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_has_eleven_rows_and_matches_analyze_at_zero() {
    let ws = Workspace::new();
    let csv = ok(&[
        "sweep", "--weights", ws.s("w.dcwt"), "--stats", ws.s("s.json"), "--chunk-size", "4096", "--tokens", "8",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,cr,near_zero,layer_error");
    assert_eq!(lines.len(), 12);

    let rows: Vec<SweepRow> = serde_json::from_str(&ok(&[
        "sweep", "--weights", ws.s("w.dcwt"), "--stats", ws.s("s.json"), "--chunk-size", "4096", "--tokens", "8",
        "--json",
    ]))
    .unwrap();
    assert_eq!(rows.len(), 11);
    for (line, row) in lines[1..].iter().zip(&rows) {
        let cr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(cr, row.cr);
    }
    for w in rows.windows(2) {
        assert!(w[1].cr >= w[0].cr, "{w:?}");
    }
    ws.quantize("0", "a0.dcc1");
    let base = ws.analyze("a0.dcc1");
    assert_eq!(rows[0].cr, base.totals.cr);
    assert_eq!(rows[0].near_zero, base.totals.near_zero_fraction);
}

fn profile(dir: &Path) -> (HardwareProfile, PathBuf) {
    let h = HardwareProfile {
        b_stoc: 3.0,
        b_ctog: 25.0,
        b_gpu: 600.0,
        d_max: 10.0,
        c_sat: 1e6,
        i_gpu: 80.0,
        mem_gpu: 45e9,
        mem_cpu: 64e9,
    };
    let path = dir.join("profile.json");
    std::fs::write(&path, serde_json::to_string(&h).unwrap()).unwrap();
    (h, path)
}

#[derive(serde::Deserialize)]
struct SimOut {
    plan: CompressionPlan,
    feasible: bool,
    report: LatencyReport,
}

#[test]
fn simulate_is_a_thin_wrapper_over_latency() {
    let dir = tempfile::tempdir().unwrap();
    let (h, path) = profile(dir.path());
    let p = path.to_str().unwrap();
    let out: SimOut = serde_json::from_str(&ok(&[
        "simulate", "--profile", p, "--n-chunks", "20", "--chunk-size", "16777216", "--block-size", "3", "--cr",
        "1.8", "--arch", "gpu-cpu", "--json",
    ]))
    .unwrap();
    let plan = CompressionPlan::block_rule(16 << 20, 20, 3).unwrap();
    let cr: Vec<f64> = plan.compressed_mask.iter().map(|&m| if m { 1.8 } else { 1.0 }).collect();
    let want = latency(&h, &plan, Architecture::GpuCpu, &cr).unwrap();
    assert_eq!(out.plan, plan);
    assert_eq!(out.report, want);
    assert!(out.feasible);

    std::fs::write(dir.path().join("plan.json"), serde_json::to_string(&plan).unwrap()).unwrap();
    let from_file: SimOut = serde_json::from_str(&ok(&[
        "simulate", "--profile", p, "--plan", dir.path().join("plan.json").to_str().unwrap(), "--cr", "1.8", "--arch",
        "gpu-cpu", "--json",
    ]))
    .unwrap();
    assert_eq!(from_file.report, want);
}

#[test]
fn simulate_budget_picks_a_block_size_or_warns() {
    let dir = tempfile::tempdir().unwrap();
    let (h, path) = profile(dir.path());
    let p = path.to_str().unwrap();
    // all-compressed is decompression bound at S/D per chunk; allow a fifth of that
    let s = 16u64 << 20;
    let all_store = latency(&h, &CompressionPlan::all_store(s, 50), Architecture::GpuBuffer, &[2.0; 50])
        .unwrap()
        .per_sample_latency;
    let budget = (50.0 * s as f64 / (h.d_max * 1e9) / 5.0).max(all_store);
    let text = ok(&[
        "simulate", "--profile", p, "--n-chunks", "50", "--cr", "2", "--arch", "gpu-buffer", "--budget",
        &budget.to_string(),
    ]);
    assert!(text.lines().any(|l| l.starts_with("block_size") && l.ends_with(" 5")), "{text}");

    let out = dcomp(&["simulate", "--profile", p, "--n-chunks", "50", "--budget", "1e-9"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("feasible            false"));
}

#[test]
fn bench_reports_both_codecs() {
    let json = ok(&["--json", "bench", "--size-mib", "1", "--chunk-size", "262144"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["codec"], "store");
    assert!(rows[1]["ratio"].as_f64().unwrap() > 1.2);
}

#[test]
fn usage_and_environment_errors_exit_two() {
    assert_eq!(dcomp(&["quantize"]).status.code(), Some(2));
    assert_eq!(dcomp(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(dcomp(&["prune", "x", "--stats", "s", "--out", "o", "--scope", "diagonal"]).status.code(), Some(2));
    assert_eq!(dcomp(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_dcomp"))
        .args(["analyze", "nothing"])
        .env("DCOMP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let ws = Workspace::new();
    ws.quantize("0.5", "q.dcc1");
    ok(&["pack", ws.s("q.dcc1"), "--out", ws.s("c1.dcc1")]);
    let status = Command::new(env!("CARGO_BIN_EXE_dcomp"))
        .args(["pack", ws.s("q.dcc1"), "--out", ws.s("c2.dcc1")])
        .env("DCOMP_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&ws.p("c1.dcc1")), read(&ws.p("c2.dcc1")));
}

#[test]
fn bad_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"not a container at all").unwrap();
    assert_eq!(dcomp(&["analyze", junk.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(dcomp(&["analyze", dir.path().join("missing").to_str().unwrap()]).status.code(), Some(3));
}
