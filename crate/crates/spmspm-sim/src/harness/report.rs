//! Report assembly: JSON Lines records per (layer, dataflow) plus a
//! plain-text summary table. Output is byte-deterministic for identical
//! inputs: no timestamps, fixed field order, fixed iteration order.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataflow::Dataflow;
use crate::engine::SimResult;
use crate::harness::select::{family_name, ModelRun, SweepReport};

/// One JSONL record: a layer simulated under one dataflow.
#[derive(Debug, Serialize)]
pub struct LayerRecord<'a> {
    pub layer: usize,
    pub label: &'a str,
    pub dataflow: &'static str,
    pub chosen: bool,
    pub cycles_total: u64,
    pub cycles_stationary: u64,
    pub cycles_streaming: u64,
    pub cycles_merging: u64,
    pub cycles_conversion: u64,
    /// Conversion cycles charged on the chain edge into this layer (only
    /// meaningful on the chosen record).
    pub chain_ec_cycles: u64,
    pub sta_read_bytes: u64,
    pub str_read_bytes: u64,
    pub psram_write_bytes: u64,
    pub psram_read_bytes: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub str_hits: u64,
    pub str_misses: u64,
    pub str_miss_rate: f64,
    pub psum_count: u64,
    pub ec_conversions: u64,
    pub tile_passes: u64,
    pub output_nnz: usize,
}

#[derive(Debug, Serialize)]
pub struct SummaryRecord<'a> {
    pub summary: &'a str,
    pub strategy: &'a str,
    pub total_cycles: u64,
    pub baselines: Vec<BaselineRecord>,
}

#[derive(Debug, Serialize)]
pub struct BaselineRecord {
    pub baseline: String,
    pub total_cycles: u64,
    pub speedup: f64,
}

fn record<'a>(
    layer: usize,
    label: &'a str,
    d: Dataflow,
    r: &SimResult,
    chosen: bool,
    chain_ec: u64,
) -> LayerRecord<'a> {
    LayerRecord {
        layer,
        label,
        dataflow: d.cli_name(),
        chosen,
        cycles_total: r.cycles_total,
        cycles_stationary: r.cycles.stationary,
        cycles_streaming: r.cycles.streaming,
        cycles_merging: r.cycles.merging,
        cycles_conversion: r.cycles.conversion,
        chain_ec_cycles: chain_ec,
        sta_read_bytes: r.traffic.sta_read,
        str_read_bytes: r.traffic.str_read,
        psram_write_bytes: r.traffic.psram_write,
        psram_read_bytes: r.traffic.psram_read,
        dram_read_bytes: r.traffic.dram_read,
        dram_write_bytes: r.traffic.dram_write,
        str_hits: r.str_cache.hits,
        str_misses: r.str_cache.misses,
        str_miss_rate: r.str_cache.miss_rate,
        psum_count: r.psum_count,
        ec_conversions: r.ec_conversions,
        tile_passes: r.tile_passes,
        output_nnz: r.c.nnz(),
    }
}

/// Serializes a model run (plus optional baseline totals) as JSON Lines.
pub fn model_jsonl(
    run: &ModelRun,
    strategy_label: &str,
    baselines: &[(String, u64)],
) -> crate::Result<String> {
    let mut out = String::new();
    for (i, layer) in run.layers.iter().enumerate() {
        for &(d, ref r) in &layer.sims {
            let chosen = run.chain[i] == d;
            let rec = record(
                i,
                &layer.label,
                d,
                r,
                chosen,
                if chosen { run.ec_cycles[i] } else { 0 },
            );
            let line = serde_json::to_string(&rec)
                .map_err(|e| crate::Error::Invariant(format!("report serialization: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    let summary = SummaryRecord {
        summary: "model",
        strategy: strategy_label,
        total_cycles: run.total_cycles,
        baselines: baselines
            .iter()
            .map(|(name, cycles)| BaselineRecord {
                baseline: name.clone(),
                total_cycles: *cycles,
                speedup: *cycles as f64 / run.total_cycles.max(1) as f64,
            })
            .collect(),
    };
    let line = serde_json::to_string(&summary)
        .map_err(|e| crate::Error::Invariant(format!("report serialization: {e}")))?;
    out.push_str(&line);
    out.push('\n');
    Ok(out)
}

/// Human-oriented per-layer table: cycles, traffic and miss rate per
/// dataflow, the chosen one starred.
pub fn model_table(run: &ModelRun, strategy_label: &str, baselines: &[(String, u64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<8} {:>12} {:>10} {:>12} {:>12} {:>10} {:>9}",
        "layer", "dataflow", "cycles", "sta B", "str B", "psram B", "offchip B", "miss%"
    );
    for (i, layer) in run.layers.iter().enumerate() {
        for &(d, ref r) in &layer.sims {
            let star = if run.chain[i] == d { "*" } else { " " };
            let _ = writeln!(
                out,
                "{:<10} {}{:<7} {:>12} {:>10} {:>12} {:>12} {:>10} {:>9.3}",
                layer.label,
                star,
                d.cli_name(),
                r.cycles_total,
                r.traffic.sta_read,
                r.traffic.str_read,
                r.traffic.psram_write + r.traffic.psram_read,
                r.traffic.dram_read + r.traffic.dram_write,
                100.0 * r.str_cache.miss_rate,
            );
        }
    }
    let _ = writeln!(out, "strategy {strategy_label}: total cycles {}", run.total_cycles);
    for (name, cycles) in baselines {
        let _ = writeln!(
            out,
            "  vs {name}: {cycles} cycles, speedup {:.3}",
            *cycles as f64 / run.total_cycles.max(1) as f64
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct SweepRecord<'a> {
    point: usize,
    m: usize,
    n: usize,
    k: usize,
    sp_a: f64,
    sp_b: f64,
    dataflow: &'static str,
    chosen: bool,
    cycles_total: u64,
    cycles_stationary: u64,
    cycles_streaming: u64,
    cycles_merging: u64,
    str_read_bytes: u64,
    dram_read_bytes: u64,
    str_miss_rate: f64,
    psum_count: u64,
    winner: &'a str,
}

/// Serializes a sweep as JSON Lines plus a winner-distribution summary.
pub fn sweep_jsonl(report: &SweepReport) -> crate::Result<String> {
    let mut out = String::new();
    for (pi, p) in report.points.iter().enumerate() {
        for (d, r) in Dataflow::ALL.into_iter().zip(&p.results) {
            let rec = SweepRecord {
                point: pi,
                m: p.point.m,
                n: p.point.n,
                k: p.point.k,
                sp_a: p.point.sp_a,
                sp_b: p.point.sp_b,
                dataflow: d.cli_name(),
                chosen: d == p.winner,
                cycles_total: r.cycles_total,
                cycles_stationary: r.cycles.stationary,
                cycles_streaming: r.cycles.streaming,
                cycles_merging: r.cycles.merging,
                str_read_bytes: r.traffic.str_read,
                dram_read_bytes: r.traffic.dram_read,
                str_miss_rate: r.str_cache.miss_rate,
                psum_count: r.psum_count,
                winner: p.winner.cli_name(),
            };
            let line = serde_json::to_string(&rec)
                .map_err(|e| crate::Error::Invariant(format!("report serialization: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    let mut winners = serde_json::Map::new();
    for d in Dataflow::ALL {
        winners.insert(
            d.cli_name().to_string(),
            serde_json::Value::from(report.winner_counts[d as usize]),
        );
    }
    let summary = serde_json::json!({"summary": "sweep", "points": report.points.len(), "winners": winners});
    out.push_str(&summary.to_string());
    out.push('\n');
    Ok(out)
}

pub fn sweep_table(report: &SweepReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>5} {:>6} {:>5} {:>5} {:>5}  {:>10}  winner",
        "pt", "M", "N", "K", "spA", "spB", "best cyc"
    );
    for (pi, p) in report.points.iter().enumerate() {
        let best = p.cycles[p.winner as usize];
        let _ = writeln!(
            out,
            "{:>4} {:>5} {:>6} {:>5} {:>5.2} {:>5.2}  {:>10}  {}",
            pi, p.point.m, p.point.n, p.point.k, p.point.sp_a, p.point.sp_b, best,
            p.winner.cli_name()
        );
    }
    let _ = write!(out, "winners:");
    for d in Dataflow::ALL {
        let _ = write!(out, " {}={}", d.cli_name(), report.winner_counts[d as usize]);
    }
    out.push('\n');
    out
}

/// Baseline label for the summary records.
pub fn baseline_label(f: crate::dataflow::Family) -> String {
    format!("fixed-{}", family_name(f))
}
