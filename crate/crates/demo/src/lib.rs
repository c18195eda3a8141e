//! Browser bindings: each export takes plain parameters and returns a JSON string.

use hmcsim::{
    coverage_accuracy, generate, simulate, Hierarchy, HierarchyConfig, MemoryAccess, Pattern,
    PrefetchSystem, ServedLevel, TraceGenSpec,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SYSTEMS: [PrefetchSystem; 3] = [
    PrefetchSystem::NoPrefetch,
    PrefetchSystem::Hmc,
    PrefetchSystem::HmcPlusL1,
];

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown {what} {s:?}"))
}

fn trace(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u64,
) -> Result<Vec<MemoryAccess>, String> {
    let spec = TraceGenSpec {
        pattern: parse::<Pattern>("pattern", pattern)?,
        count: count as u64,
        footprint: footprint_kb as u64 * 1024,
        seed,
        ..Default::default()
    };
    generate(&spec).map_err(|e| e.to_string())
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SystemRow {
    system: &'static str,
    amat: f64,
    mpki_l1d: f64,
    mpki_l2: f64,
    mpki_hmc: f64,
    hmc_coverage: Option<f64>,
    hmc_accuracy: Option<f64>,
    l1_coverage: Option<f64>,
}

pub fn compare_systems_impl(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u64,
) -> Result<String, String> {
    let t = trace(pattern, count, footprint_kb, seed)?;
    let runs = SYSTEMS
        .iter()
        .map(|&s| {
            simulate(&t, &HierarchyConfig::default().with_system(s)).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let base = &runs[0];
    let rows: Vec<SystemRow> = SYSTEMS
        .iter()
        .zip(&runs)
        .map(|(s, c)| {
            let d = c.derive();
            let hmc = coverage_accuracy(
                base.hmc.demand_misses,
                c.hmc.demand_misses,
                c.hmc.prefetch_issued,
            );
            let l1 = coverage_accuracy(
                base.l1d.demand_misses,
                c.l1d.demand_misses,
                c.l1d.prefetch_issued,
            );
            SystemRow {
                system: s.name(),
                amat: d.amat,
                mpki_l1d: d.l1d.mpki,
                mpki_l2: d.l2.mpki,
                mpki_hmc: d.hmc.mpki,
                hmc_coverage: hmc.coverage,
                hmc_accuracy: hmc.accuracy,
                l1_coverage: l1.coverage,
            }
        })
        .collect();
    json(&rows)
}

#[derive(Serialize)]
struct DepthPoint {
    depth: u32,
    amat: f64,
    mpki_hmc: f64,
    hmc_coverage: Option<f64>,
    hmc_accuracy: Option<f64>,
}

/// AMAT and HMC coverage as every prefetcher depth goes from 0 to `max_depth`.
pub fn depth_sweep_impl(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u64,
    system: &str,
    max_depth: u32,
) -> Result<String, String> {
    let system = parse::<PrefetchSystem>("system", system)?;
    let t = trace(pattern, count, footprint_kb, seed)?;
    let base = simulate(&t, &HierarchyConfig::default()).map_err(|e| e.to_string())?;
    let points = (0..=max_depth.min(16))
        .map(|depth| {
            let cfg = HierarchyConfig::default()
                .with_system(system)
                .with_depths(depth);
            let c = simulate(&t, &cfg).map_err(|e| e.to_string())?;
            let ca = coverage_accuracy(
                base.hmc.demand_misses,
                c.hmc.demand_misses,
                c.hmc.prefetch_issued,
            );
            let d = c.derive();
            Ok(DepthPoint {
                depth,
                amat: d.amat,
                mpki_hmc: d.hmc.mpki,
                hmc_coverage: ca.coverage,
                hmc_accuracy: ca.accuracy,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    json(&points)
}

#[derive(Serialize)]
struct Histogram {
    system: &'static str,
    /// `(level, accesses served there, latency of one such access)`.
    levels: Vec<(&'static str, u64, u64)>,
    stream_buffer_hits: u64,
    amat: f64,
}

/// How many accesses each level served, with the per-access latency of that level.
pub fn latency_histogram_impl(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u64,
    system: &str,
) -> Result<String, String> {
    let system = parse::<PrefetchSystem>("system", system)?;
    let t = trace(pattern, count, footprint_kb, seed)?;
    let mut h = Hierarchy::new(HierarchyConfig::default().with_system(system))
        .map_err(|e| e.to_string())?;
    let names = ["L1", "stream buffer", "L2", "HMC", "DRAM cache", "NVRAM"];
    let mut counts = [0u64; 6];
    let mut latency = [0u64; 6];
    let mut total = 0u64;
    for rec in &t {
        let o = h.access(rec);
        let i = match o.served_level {
            _ if o.stream_buffer_hit => 1,
            ServedLevel::L1 => 0,
            ServedLevel::L2 => 2,
            ServedLevel::Hmc => 3,
            ServedLevel::DramCache => 4,
            ServedLevel::Nvram => 5,
        };
        counts[i] += 1;
        latency[i] = latency[i].max(o.total_latency);
        total += o.total_latency;
    }
    json(&Histogram {
        system: system.name(),
        levels: (0..6).map(|i| (names[i], counts[i], latency[i])).collect(),
        stream_buffer_hits: counts[1],
        amat: total as f64 / t.len().max(1) as f64,
    })
}

#[wasm_bindgen]
pub fn compare_systems(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u32,
) -> Result<String, JsError> {
    compare_systems_impl(pattern, count, footprint_kb, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn depth_sweep(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u32,
    system: &str,
    max_depth: u32,
) -> Result<String, JsError> {
    depth_sweep_impl(pattern, count, footprint_kb, seed as u64, system, max_depth)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn latency_histogram(
    pattern: &str,
    count: u32,
    footprint_kb: u32,
    seed: u32,
    system: &str,
) -> Result<String, JsError> {
    latency_histogram_impl(pattern, count, footprint_kb, seed as u64, system)
        .map_err(|e| JsError::new(&e))
}
