//! Dataflow selection and multi-layer model execution.
//!
//! Selection strategies:
//!
//! * exhaustive - simulate all six dataflows and take the cycle argmin
//!   (over a model, a two-state dynamic program over the emitted format
//!   picks the best chain including conversion costs);
//! * heuristic - a closed-form rule over layer statistics;
//! * fixed - one pinned dataflow;
//! * fixed family - a family preset that picks the M or N variant per
//!   layer to avoid conversions when possible (the fixed-dataflow
//!   baseline machines).
//!
//! Activations flow layer to layer in the producer's emitted format and
//! feed the consumer's A operand; weights are staged offline in whichever
//! format the consumer needs.

use crate::dataflow::{Dataflow, Family};
use crate::engine::{run_layer, LayerSpec, SimResult};
use crate::harness::config::AcceleratorConfig;
use crate::harness::model::{GridPoint, GridSpec, LayerSource, ModelSpec, TransitionPolicy};
use crate::sparse::{
    compress, decompress, gen_sparse_with, load_matrix_str, CompressedMatrix, MajorAxis,
    ValueMode, ELEMENT_WORD_BYTES, POINTER_WORD_BYTES, SPARSE_VALUE_MAX, SPARSE_VALUE_MIN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Exhaustive,
    Heuristic,
    Fixed(Dataflow),
    FixedFamily(Family),
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Strategy> {
        match name {
            "auto" | "exhaustive" => Ok(Strategy::Exhaustive),
            "heuristic" => Ok(Strategy::Heuristic),
            other => Ok(Strategy::Fixed(Dataflow::parse_cli_name(other)?)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Exhaustive => "exhaustive".into(),
            Strategy::Heuristic => "heuristic".into(),
            Strategy::Fixed(d) => format!("fixed-{}", d.cli_name()),
            Strategy::FixedFamily(f) => format!("fixed-{}", family_name(*f)),
        }
    }
}

pub fn family_name(f: Family) -> &'static str {
    match f {
        Family::Ip => "ip",
        Family::Op => "op",
        Family::Gust => "gust",
    }
}

pub fn parse_family(name: &str) -> Result<Family> {
    match name {
        "ip" => Ok(Family::Ip),
        "op" => Ok(Family::Op),
        "gust" => Ok(Family::Gust),
        other => Err(Error::Input(format!(
            "unknown baseline family {other:?} (expected ip, op or gust)"
        ))),
    }
}

/// Layer statistics feeding the heuristic rule.
#[derive(Debug, Clone, Copy)]
pub struct LayerStats {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub nnz_a: usize,
    pub nnz_b: usize,
}

impl LayerStats {
    pub fn of_layer(layer: &LayerSpec) -> LayerStats {
        let (m, n, k) = layer.dims();
        LayerStats { m, n, k, nnz_a: layer.a.nnz(), nnz_b: layer.b.nnz() }
    }

    fn compressed_bytes(nnz: usize, major_dim: usize) -> u64 {
        nnz as u64 * ELEMENT_WORD_BYTES + (major_dim as u64 + 1) * POINTER_WORD_BYTES
    }
}

/// Picks the M or N variant of `family` for a given incoming activation
/// format: avoid a conversion when possible, M on ties.
fn family_variant(family: Family, incoming: Option<MajorAxis>) -> Dataflow {
    let candidates = match family {
        Family::Ip => [Dataflow::IpM, Dataflow::IpN],
        Family::Op => [Dataflow::OpM, Dataflow::OpN],
        Family::Gust => [Dataflow::GustM, Dataflow::GustN],
    };
    *candidates
        .iter()
        .min_by_key(|&&d| {
            let p = d.properties();
            let needs_ec = incoming.is_some_and(|f| f != p.a_format);
            (needs_ec, !d.is_m_stationary())
        })
        .expect("two candidates")
}

/// Rule-based selection: a streaming matrix that fits comfortably in the
/// cache favors Gustavson's row reuse; otherwise a dense-enough stationary
/// matrix keeps inner-product intersections effectual; otherwise stream it
/// once as an outer product. The M/N variant then follows the incoming
/// activation format.
pub fn heuristic_choose(
    stats: LayerStats,
    incoming: Option<MajorAxis>,
    cfg: &AcceleratorConfig,
) -> Dataflow {
    let m_side = incoming != Some(MajorAxis::Col);
    // Streaming operand under the preferred stationarity.
    let (str_nnz, str_major, sta_nnz, sta_cells) = if m_side {
        (stats.nnz_b, stats.k, stats.nnz_a, stats.m * stats.k)
    } else {
        (stats.nnz_a, stats.m, stats.nnz_b, stats.k * stats.n)
    };
    let str_bytes = LayerStats::compressed_bytes(str_nnz, str_major);
    let cache_cut = (cfg.str_cache_bytes as f64 * cfg.heuristic_cache_fit_fraction) as u64;
    let density = if sta_cells == 0 { 0.0 } else { sta_nnz as f64 / sta_cells as f64 };
    let family = if str_bytes <= cache_cut {
        Family::Gust
    } else if density >= cfg.heuristic_density_cut {
        Family::Ip
    } else {
        Family::Op
    };
    family_variant(family, incoming)
}

/// Simulates `layer` under every dataflow, operands staged in each
/// dataflow's required formats. Returned in tie-break order.
pub fn simulate_all(layer: &LayerSpec, cfg: &AcceleratorConfig) -> Result<Vec<SimResult>> {
    let dense_a = decompress(&layer.a)?;
    let dense_b = decompress(&layer.b)?;
    Dataflow::ALL
        .into_iter()
        .map(|d| {
            let staged = LayerSpec::from_dense(&dense_a, &dense_b, d)?;
            run_layer(&staged, d, cfg)
        })
        .collect()
}

/// Single-layer selection. Exhaustive simulates all six and returns the
/// argmin by cycles (ties break in declaration order); heuristic and
/// fixed strategies simulate only their choice.
pub fn select_dataflow(
    layer: &LayerSpec,
    cfg: &AcceleratorConfig,
    strategy: Strategy,
) -> Result<(Dataflow, SimResult)> {
    match strategy {
        Strategy::Exhaustive => {
            let sims = simulate_all(layer, cfg)?;
            let best = Dataflow::ALL
                .into_iter()
                .zip(&sims)
                .min_by_key(|(d, r)| (r.cycles_total, *d))
                .map(|(d, _)| d)
                .expect("six candidates");
            let res = sims.into_iter().nth(best as usize).expect("indexed by dataflow");
            Ok((best, res))
        }
        Strategy::Heuristic => {
            let d = heuristic_choose(LayerStats::of_layer(layer), None, cfg);
            Ok((d, run_layer(layer, d, cfg)?))
        }
        Strategy::Fixed(d) => Ok((d, run_layer(layer, d, cfg)?)),
        Strategy::FixedFamily(f) => {
            let d = family_variant(f, None);
            Ok((d, run_layer(layer, d, cfg)?))
        }
    }
}

/// One prepared model layer: canonical operand contents plus per-dataflow
/// simulation results (all six for exhaustive, one otherwise).
#[derive(Debug)]
pub struct PreparedLayer {
    pub label: String,
    /// (dataflow, result) pairs actually simulated.
    pub sims: Vec<(Dataflow, SimResult)>,
    /// Activation compressed sizes by incoming format, for conversion
    /// cost accounting: (row-major bytes, col-major bytes).
    pub a_bytes: (u64, u64),
}

/// A fully executed model chain.
#[derive(Debug)]
pub struct ModelRun {
    pub layers: Vec<PreparedLayer>,
    /// Chosen dataflow per layer.
    pub chain: Vec<Dataflow>,
    /// Conversion cycles charged entering each layer (0 for layer 1).
    pub ec_cycles: Vec<u64>,
    pub total_cycles: u64,
}

fn conversion_cycles(cfg: &AcceleratorConfig, bytes_read: u64, bytes_write: u64) -> u64 {
    let bpc = cfg.dram_bytes_per_cycle();
    bytes_read.div_ceil(bpc) + bytes_write.div_ceil(bpc) + cfg.dram_latency_cycles()
}

fn matrix_bytes(nnz: usize, rows: usize, cols: usize) -> (u64, u64) {
    let elem = nnz as u64 * ELEMENT_WORD_BYTES;
    (
        elem + (rows as u64 + 1) * POINTER_WORD_BYTES,
        elem + (cols as u64 + 1) * POINTER_WORD_BYTES,
    )
}

fn bytes_for(fmt: MajorAxis, bytes: (u64, u64)) -> u64 {
    match fmt {
        MajorAxis::Row => bytes.0,
        MajorAxis::Col => bytes.1,
    }
}

/// Loads or synthesizes a layer's operand matrices. `chain_a` overrides
/// the declared A operand for layers after the first.
fn materialize_layer(
    source: &LayerSource,
    chain_a: Option<&CompressedMatrix>,
    index: usize,
    mode: ValueMode,
    read_file: &dyn Fn(&str) -> Result<String>,
) -> Result<(CompressedMatrix, CompressedMatrix, String)> {
    let (a, b, label) = match source {
        LayerSource::Files { a, b } => {
            let b_mat = load_matrix_str(&read_file(b)?)?.0;
            let a_mat = match chain_a {
                Some(prev) => prev.clone(),
                None => load_matrix_str(&read_file(a)?)?.0,
            };
            (a_mat, b_mat, format!("L{index}:file"))
        }
        LayerSource::Synth { m, n, k, sp_a, sp_b, seed } => {
            let b_dense = gen_sparse_with(
                *k,
                *n,
                *sp_b,
                crate::harness::model::splitmix64(seed ^ 0xb),
                (SPARSE_VALUE_MIN, SPARSE_VALUE_MAX),
                mode,
            )?;
            let b_mat = compress(&b_dense, MajorAxis::Row);
            let a_mat = match chain_a {
                Some(prev) => prev.clone(),
                None => {
                    let a_dense = gen_sparse_with(
                        *m,
                        *k,
                        *sp_a,
                        crate::harness::model::splitmix64(seed ^ 0xa),
                        (SPARSE_VALUE_MIN, SPARSE_VALUE_MAX),
                        mode,
                    )?;
                    compress(&a_dense, MajorAxis::Row)
                }
            };
            (a_mat, b_mat, format!("L{index}:synth"))
        }
    };
    if let (Some(prev), LayerSource::Synth { m, k, .. }) = (chain_a, source) {
        if prev.n_rows() != *m || prev.n_cols() != *k {
            return Err(Error::Input(format!(
                "layer {index}: declared {m}x{k} activation does not match the chain ({}x{})",
                prev.n_rows(),
                prev.n_cols()
            )));
        }
    }
    if a.n_cols() != b.n_rows() {
        return Err(Error::Input(format!(
            "layer {index}: operand dimensions do not compose ({}x{} times {}x{})",
            a.n_rows(),
            a.n_cols(),
            b.n_rows(),
            b.n_cols()
        )));
    }
    Ok((a, b, label))
}

/// Runs a model chain under a strategy. Per layer, operands are staged in
/// each candidate's required formats; the conversion cost of a mismatched
/// activation hand-off is charged on the chain edge. The exhaustive
/// strategy optimizes the whole chain by dynamic programming over the two
/// possible emitted formats.
pub fn run_model(
    model: &ModelSpec,
    cfg: &AcceleratorConfig,
    strategy: Strategy,
    mode: ValueMode,
    read_file: &dyn Fn(&str) -> Result<String>,
) -> Result<ModelRun> {
    cfg.validate()?;
    let mut layers: Vec<PreparedLayer> = Vec::new();
    let mut chain_a: Option<CompressedMatrix> = None;

    for (i, source) in model.layers.iter().enumerate() {
        let (a, b, label) = materialize_layer(source, chain_a.as_ref(), i, mode, read_file)?;
        let layer = LayerSpec::new(a.clone(), b, Some(label.clone()))?;
        let sims: Vec<(Dataflow, SimResult)> = match strategy {
            Strategy::Exhaustive => Dataflow::ALL
                .into_iter()
                .zip(simulate_all(&layer, cfg)?)
                .collect(),
            Strategy::Heuristic | Strategy::Fixed(_) | Strategy::FixedFamily(_) => {
                // One candidate per layer; picked below, but heuristic and
                // family presets depend on the incoming format, so the
                // choice is made here layer by layer.
                let incoming = layers
                    .last()
                    .map(|_: &PreparedLayer| chain_format_of(&layers, strategy));
                let d = match strategy {
                    Strategy::Heuristic => {
                        heuristic_choose(LayerStats::of_layer(&layer), incoming, cfg)
                    }
                    Strategy::Fixed(d) => d,
                    Strategy::FixedFamily(f) => family_variant(f, incoming),
                    Strategy::Exhaustive => unreachable!(),
                };
                let dense_a = decompress(&layer.a)?;
                let dense_b = decompress(&layer.b)?;
                let staged = LayerSpec::from_dense(&dense_a, &dense_b, d)?;
                vec![(d, run_layer(&staged, d, cfg)?)]
            }
        };
        let a_bytes = matrix_bytes(a.nnz(), a.n_rows(), a.n_cols());
        // The canonical activation for the next layer: the numerical
        // output with any stored zeros dropped.
        let c_content = compress(&decompress(&sims[0].1.c)?, MajorAxis::Row);
        chain_a = Some(c_content);
        layers.push(PreparedLayer { label, sims, a_bytes });
    }

    let (chain, ec_cycles, total_cycles) = choose_chain(&layers, cfg, strategy, model.policy)?;
    Ok(ModelRun { layers, chain, ec_cycles, total_cycles })
}

/// Emitted format of the last chosen layer for single-candidate
/// strategies (their choice is already recorded in `sims`).
fn chain_format_of(layers: &[PreparedLayer], _strategy: Strategy) -> MajorAxis {
    let (d, _) = layers.last().expect("non-empty").sims[0];
    d.properties().c_format
}

fn choose_chain(
    layers: &[PreparedLayer],
    cfg: &AcceleratorConfig,
    strategy: Strategy,
    policy: TransitionPolicy,
) -> Result<(Vec<Dataflow>, Vec<u64>, u64)> {
    match strategy {
        Strategy::Exhaustive => choose_chain_dp(layers, cfg, policy),
        _ => {
            // Single-candidate strategies: the chain is already fixed.
            let mut chain = Vec::new();
            let mut ecs = Vec::new();
            let mut total = 0u64;
            let mut incoming: Option<MajorAxis> = None;
            for layer in layers {
                let (d, ref res) = layer.sims[0];
                let needs_ec = incoming.is_some_and(|f| f != d.properties().a_format);
                if needs_ec && policy == TransitionPolicy::ForbidEc {
                    return Err(Error::Input(format!(
                        "forbid-ec chain is infeasible: {} cannot consume {} output",
                        d.cli_name(),
                        incoming.expect("checked").name()
                    )));
                }
                let ec = if needs_ec {
                    let from = incoming.expect("checked");
                    conversion_cycles(
                        cfg,
                        bytes_for(from, layer.a_bytes),
                        bytes_for(d.properties().a_format, layer.a_bytes),
                    )
                } else {
                    0
                };
                total += res.cycles_total + ec;
                ecs.push(ec);
                chain.push(d);
                incoming = Some(d.properties().c_format);
            }
            Ok((chain, ecs, total))
        }
    }
}

/// Two-state dynamic program: after each layer the only chain state that
/// matters is the emitted format (CSR or CSC). Ties resolve toward the
/// earlier dataflow in declaration order.
fn choose_chain_dp(
    layers: &[PreparedLayer],
    cfg: &AcceleratorConfig,
    policy: TransitionPolicy,
) -> Result<(Vec<Dataflow>, Vec<u64>, u64)> {
    const FMTS: [MajorAxis; 2] = [MajorAxis::Row, MajorAxis::Col];
    let fmt_idx = |f: MajorAxis| match f {
        MajorAxis::Row => 0usize,
        MajorAxis::Col => 1usize,
    };
    // best[s] = (total, per-layer choices) for chains ending in format s.
    let mut best: [Option<(u64, Vec<(Dataflow, u64)>)>; 2] = [None, None];
    for (i, layer) in layers.iter().enumerate() {
        let mut next: [Option<(u64, Vec<(Dataflow, u64)>)>; 2] = [None, None];
        for &(d, ref res) in &layer.sims {
            let p = d.properties();
            let out = fmt_idx(p.c_format);
            if i == 0 {
                let cand = (res.cycles_total, vec![(d, 0u64)]);
                if next[out].as_ref().is_none_or(|b| cand.0 < b.0) {
                    next[out] = Some(cand);
                }
                continue;
            }
            for from in FMTS {
                let Some((prev_total, prev_path)) = best[fmt_idx(from)].as_ref() else {
                    continue;
                };
                let needs_ec = from != p.a_format;
                if needs_ec && policy == TransitionPolicy::ForbidEc {
                    continue;
                }
                let ec = if needs_ec {
                    conversion_cycles(
                        cfg,
                        bytes_for(from, layer.a_bytes),
                        bytes_for(p.a_format, layer.a_bytes),
                    )
                } else {
                    0
                };
                let total = prev_total + res.cycles_total + ec;
                if next[out].as_ref().is_none_or(|b| total < b.0) {
                    let mut path = prev_path.clone();
                    path.push((d, ec));
                    next[out] = Some((total, path));
                }
            }
        }
        best = next;
    }
    let (total, path) = best
        .into_iter()
        .flatten()
        .min_by_key(|(t, _)| *t)
        .ok_or_else(|| Error::Input("forbid-ec chain is infeasible".into()))?;
    let chain: Vec<Dataflow> = path.iter().map(|&(d, _)| d).collect();
    let ecs: Vec<u64> = path.iter().map(|&(_, e)| e).collect();
    Ok((chain, ecs, total))
}

/// Sweep results for one grid point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub point: GridPoint,
    /// Cycle totals in dataflow declaration order.
    pub cycles: [u64; 6],
    pub winner: Dataflow,
    pub results: Vec<SimResult>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// (dataflow, points won), declaration order.
    pub winner_counts: [usize; 6],
}

/// Runs every grid point under all six dataflows and records the winner
/// map. Deterministic: points in grid order, per-point seeds derived from
/// the grid seed.
pub fn sweep(grid: &GridSpec, cfg: &AcceleratorConfig, mode: ValueMode) -> Result<SweepReport> {
    cfg.validate()?;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Input("sweep grid is empty".into()));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut winner_counts = [0usize; 6];
    for p in points {
        let a = gen_sparse_with(
            p.m,
            p.k,
            p.sp_a,
            crate::harness::model::splitmix64(p.seed ^ 0xa),
            (SPARSE_VALUE_MIN, SPARSE_VALUE_MAX),
            mode,
        )?;
        let b = gen_sparse_with(
            p.k,
            p.n,
            p.sp_b,
            crate::harness::model::splitmix64(p.seed ^ 0xb),
            (SPARSE_VALUE_MIN, SPARSE_VALUE_MAX),
            mode,
        )?;
        let mut results = Vec::with_capacity(6);
        for d in Dataflow::ALL {
            let layer = LayerSpec::from_dense(&a, &b, d)?;
            results.push(run_layer(&layer, d, cfg)?);
        }
        let cycles: [u64; 6] = std::array::from_fn(|i| results[i].cycles_total);
        let winner = Dataflow::ALL
            .into_iter()
            .min_by_key(|&d| (cycles[d as usize], d))
            .expect("six candidates");
        winner_counts[winner as usize] += 1;
        out.push(SweepPoint { point: p, cycles, winner, results });
    }
    Ok(SweepReport { points: out, winner_counts })
}
