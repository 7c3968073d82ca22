//! Cycle-level execution of one SpMSpM layer.
//!
//! The engine always runs the M-stationary form of a dataflow family; an
//! N-stationary request is executed by exchanging the operands (their
//! compressed vectors reinterpret as the transposed matrix at zero cost)
//! and transposing the result back. One layer proceeds tile by tile:
//!
//! 1. stationary phase: the next tile's elements stream from DRAM through
//!    the FIFO onto the multipliers (the filler runs ahead during the
//!    previous tile's streaming);
//! 2. streaming phase: the streaming operand flows through the cache and
//!    distribution network into the multipliers; products reduce through
//!    adder clusters (inner product), merge on the fly through comparator
//!    clusters (Gustavson's) or land in the psum store (outer product);
//! 3. merging phase: psum fibers are consumed per output row through the
//!    comparator tree, multipliers forwarding, and final fibers drain to
//!    DRAM through the write buffer.
//!
//! Identical inputs and configuration produce bit-identical results; the
//! engine is single-threaded and every queue is serviced in fixed order.

mod plan;
mod result;

pub use plan::{plan_tiles, Cluster, StaElem, Tile, TilePlan};
pub use result::{CacheStats, PhaseCycles, SimResult, Traffic};

use std::collections::{BTreeMap, VecDeque};

use crate::dataflow::{required_formats, Dataflow, Family};
use crate::harness::config::AcceleratorConfig;
use crate::mem::{DramKind, DramModel, Psram, StaFifo, StrCache, WriteBuffer};
use crate::noc::MrnPipe;
use crate::sparse::{compress, convert, CompressedMatrix, DenseMatrix, Element, MajorAxis};
use crate::{Error, Result};

/// Cache-probe budget per cycle for the streaming tile reader.
const PROBE_BUDGET_PER_CYCLE: usize = 64;
/// Total issue-ahead window (elements) shared by the active streams.
const TOTAL_WINDOW_ELEMS: usize = 2048;
/// Tag namespace offset for merge-intermediate psum fibers.
const MERGE_TAG_BASE: usize = 1 << 32;

/// One layer: `C = A x B` on compressed operands.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub a: CompressedMatrix,
    pub b: CompressedMatrix,
    pub label: Option<String>,
}

impl LayerSpec {
    pub fn new(
        a: CompressedMatrix,
        b: CompressedMatrix,
        label: Option<String>,
    ) -> Result<LayerSpec> {
        if a.n_cols() != b.n_rows() {
            return Err(Error::Input(format!(
                "dimension mismatch: A is {}x{}, B is {}x{}",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols()
            )));
        }
        Ok(LayerSpec { a, b, label })
    }

    /// Compresses dense operands directly into the formats `d` needs.
    pub fn from_dense(a: &DenseMatrix, b: &DenseMatrix, d: Dataflow) -> Result<LayerSpec> {
        let (a_fmt, b_fmt) = required_formats(d);
        LayerSpec::new(compress(a, a_fmt), compress(b, b_fmt), None)
    }

    /// (M, N, K)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.n_rows(), self.b.n_cols(), self.a.n_cols())
    }
}

/// Simulates one layer under dataflow `d`. Operands whose major axis does
/// not match the dataflow's required format are converted on the way in,
/// counted as explicit conversions and charged to the DRAM model.
pub fn run_layer(layer: &LayerSpec, d: Dataflow, cfg: &AcceleratorConfig) -> Result<SimResult> {
    run_layer_impl(layer, d, cfg, false).map(|(res, _)| res)
}

/// As `run_layer`, additionally returning the streaming-read trace (the
/// virtual byte address of every element delivered from the cache, in
/// delivery order). Intended for cross-checking access patterns.
pub fn run_layer_traced(
    layer: &LayerSpec,
    d: Dataflow,
    cfg: &AcceleratorConfig,
) -> Result<(SimResult, Vec<u64>)> {
    run_layer_impl(layer, d, cfg, true)
}

fn run_layer_impl(
    layer: &LayerSpec,
    d: Dataflow,
    cfg: &AcceleratorConfig,
    trace: bool,
) -> Result<(SimResult, Vec<u64>)> {
    cfg.validate()?;
    if layer.a.n_cols() != layer.b.n_rows() {
        return Err(Error::Input("operand dimensions do not compose".into()));
    }
    let (a_fmt, b_fmt) = required_formats(d);
    let mut eng = Engine::new(cfg, d.family())?;
    eng.record_str_trace = trace;
    let a = eng.ensure_format(&layer.a, a_fmt);
    let b = eng.ensure_format(&layer.b, b_fmt);
    let (sta, strm) = if d.is_m_stationary() {
        (a, b)
    } else {
        // N-stationary: execute as the M form on exchanged operands.
        (b.transpose_reinterpret(), a.transpose_reinterpret())
    };
    eng.set_operands(sta, strm);
    eng.run()?;
    let str_trace = std::mem::take(&mut eng.str_trace);
    let mut res = eng.into_result(d)?;
    if !d.is_m_stationary() {
        res.c = res.c.transpose_reinterpret();
    }
    Ok((res, str_trace))
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Stationary,
    Streaming,
}

#[derive(Debug, Clone, Copy)]
enum PipeItem {
    /// A complete output element headed for the write path.
    Final { row: usize, coord: usize, value: f64 },
    /// A psum headed for the psum store under (row, tag).
    Psum { row: usize, tag: usize, coord: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MergeDest {
    Output,
    WriteBack,
}

/// One streaming-fiber cursor: elements `range` of the streaming matrix,
/// probed ahead of delivery with per-element readiness.
#[derive(Debug)]
struct KStream {
    /// Streaming-matrix fiber id; 0 for IP's single whole-matrix stream.
    k: usize,
    range: std::ops::Range<usize>,
    issue_pos: usize,
    deliver_pos: usize,
    ready: VecDeque<u64>,
}

impl KStream {
    fn new(k: usize, range: std::ops::Range<usize>) -> KStream {
        KStream {
            k,
            issue_pos: range.start,
            deliver_pos: range.start,
            range,
            ready: VecDeque::new(),
        }
    }

    fn delivered_all(&self) -> bool {
        self.deliver_pos == self.range.end
    }
}

struct Engine<'c> {
    cfg: &'c AcceleratorConfig,
    family: Family,
    sta: CompressedMatrix,
    strm: CompressedMatrix,
    out_m: usize,
    out_n: usize,

    n_mult: usize,
    dn_bw: usize,
    mrn_bw: usize,
    depth: u64,

    cycle: u64,
    phases: PhaseCycles,
    dram: DramModel,
    fifo: StaFifo,
    cache: StrCache,
    psram: Psram,
    wbuf: WriteBuffer,
    pipe: MrnPipe<PipeItem>,

    /// Physical readiness of fetched cache lines (line -> ready cycle).
    line_ready: BTreeMap<u64, u64>,
    /// Per-cycle scratch for the streaming bank rule.
    banks_touched: Vec<bool>,
    lines_probed: Vec<u64>,

    out_rows: BTreeMap<usize, Vec<Element>>,
    /// Split-row staging for inner product (accumulates across chunks).
    ip_stage: BTreeMap<usize, Vec<Element>>,

    str_read_bytes: u64,
    psum_count: u64,
    str_fiber_requests: u64,
    ec_conversions: u64,
    tile_passes: u64,
    merge_tag_counter: usize,

    record_str_trace: bool,
    str_trace: Vec<u64>,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c AcceleratorConfig, family: Family) -> Result<Engine<'c>> {
        let dram = DramModel::new(cfg.dram_latency_cycles(), cfg.dram_bytes_per_cycle());
        let cache = StrCache::new(
            cfg.str_cache_bytes,
            cfg.str_line_bytes,
            cfg.str_assoc,
            cfg.str_banks,
        )?;
        let psram = Psram::new(
            cfg.psram_sets,
            cfg.psram_blocks_per_set,
            cfg.psram_block_bytes,
            cfg.psram_banks,
        )?;
        let unit = CompressedMatrix::empty(MajorAxis::Row, 1, 1)?;
        Ok(Engine {
            cfg,
            family,
            sta: unit.clone(),
            strm: unit,
            out_m: 1,
            out_n: 1,
            n_mult: cfg.multipliers,
            dn_bw: cfg.dn_bandwidth,
            mrn_bw: cfg.mrn_bandwidth,
            depth: cfg.tree_depth(),
            cycle: 0,
            phases: PhaseCycles::default(),
            dram,
            fifo: StaFifo::new(cfg.sta_fifo_bytes),
            cache,
            psram,
            wbuf: WriteBuffer::new(64),
            pipe: MrnPipe::new(cfg.tree_depth(), cfg.mrn_bandwidth),
            line_ready: BTreeMap::new(),
            banks_touched: vec![false; cfg.str_banks as usize],
            lines_probed: Vec::new(),
            out_rows: BTreeMap::new(),
            ip_stage: BTreeMap::new(),
            str_read_bytes: 0,
            psum_count: 0,
            str_fiber_requests: 0,
            ec_conversions: 0,
            tile_passes: 0,
            merge_tag_counter: 0,
            record_str_trace: false,
            str_trace: Vec::new(),
        })
    }

    /// Converts `m` to `target` if needed, charging the whole-matrix DRAM
    /// round trip and the conversion cycles to this run.
    fn ensure_format(&mut self, m: &CompressedMatrix, target: MajorAxis) -> CompressedMatrix {
        if m.major() == target {
            return m.clone();
        }
        let out = convert(m, target);
        let read_done = self
            .dram
            .request(self.cycle, DramKind::Read, m.compressed_size_bytes());
        let write_done = self
            .dram
            .request(self.cycle, DramKind::Write, out.compressed_size_bytes());
        let done = read_done.max(write_done);
        self.phases.conversion += done - self.cycle;
        self.cycle = done;
        self.ec_conversions += 1;
        out
    }

    fn set_operands(&mut self, sta: CompressedMatrix, strm: CompressedMatrix) {
        self.out_m = sta.n_rows();
        self.out_n = strm.n_cols();
        self.sta = sta;
        self.strm = strm;
    }

    fn tick(&mut self, phase: Phase) {
        self.cycle += 1;
        match phase {
            Phase::Stationary => self.phases.stationary += 1,
            Phase::Streaming => self.phases.streaming += 1,
        }
    }

    fn run(&mut self) -> Result<()> {
        let plan = plan_tiles(&self.sta, self.family, self.n_mult)?;
        self.cache
            .bind_extent(self.strm.nnz() as u64 * self.cfg.word_bytes);
        let mut prefill_cycle = 0u64;
        for (ti, tile) in plan.tiles.iter().enumerate() {
            self.tile_passes += 1;
            self.stationary_phase(tile, prefill_cycle)?;
            // The next tile's filler starts as streaming begins.
            prefill_cycle = self.cycle;
            match self.family {
                Family::Ip => self.stream_ip(tile)?,
                Family::Op => self.stream_op(tile)?,
                Family::Gust => self.stream_gust(tile)?,
            }
            match self.family {
                Family::Ip => self.ip_flush_tile(tile),
                Family::Op => {
                    for (row, &last) in plan.last_tile_of_row.iter().enumerate() {
                        if last == Some(ti) {
                            self.merge_row(row, MergeDest::Output)?;
                        }
                    }
                }
                Family::Gust => {
                    for cluster in &tile.clusters {
                        if cluster.is_last_chunk && cluster.chunk > 0 {
                            self.merge_row(cluster.row, MergeDest::Output)?;
                        }
                    }
                }
            }
        }
        // Drain the write buffer; the tail wait lands on the phase that
        // produced the last outputs.
        self.wbuf.drain(self.cycle, &mut self.dram);
        if self.wbuf.last_completion > self.cycle {
            let wait = self.wbuf.last_completion - self.cycle;
            self.cycle = self.wbuf.last_completion;
            if self.phases.merging > 0 {
                self.phases.merging += wait;
            } else {
                self.phases.streaming += wait;
            }
        }
        debug_assert_eq!(self.cycle, self.phases.total());
        Ok(())
    }

    // ---- stationary phase ---------------------------------------------

    fn stationary_phase(&mut self, tile: &Tile, prefill_cycle: u64) -> Result<()> {
        let n = tile.elems.len();
        self.fifo.bind(n as u64);
        // The filler began fetching this tile while the previous one was
        // streaming; its first DRAM request carries that earlier stamp.
        self.fifo.step(prefill_cycle.min(self.cycle), &mut self.dram);
        let mut delivered = 0usize;
        while delivered < n {
            self.fifo.step(self.cycle, &mut self.dram);
            let take = (self.fifo.available() as usize)
                .min(self.dn_bw)
                .min(n - delivered);
            for _ in 0..take {
                self.fifo.pop()?;
            }
            delivered += take;
            self.tick(Phase::Stationary);
        }
        Ok(())
    }

    // ---- streaming machinery --------------------------------------------

    /// Probes the cache ahead of delivery, one logical access per element,
    /// respecting the per-cycle probe budget, the per-stream window and
    /// one new line per bank per cycle.
    fn issue_step(&mut self, streams: &mut [KStream], window: usize, issue_cursor: &mut usize) {
        let n = streams.len();
        if n == 0 {
            return;
        }
        self.banks_touched.iter_mut().for_each(|b| *b = false);
        self.lines_probed.clear();
        let mut budget = PROBE_BUDGET_PER_CYCLE;
        for off in 0..n {
            if budget == 0 {
                break;
            }
            let s = &mut streams[(*issue_cursor + off) % n];
            while budget > 0 && s.issue_pos < s.range.end && (s.issue_pos - s.deliver_pos) < window
            {
                let vaddr = s.issue_pos as u64 * self.cfg.word_bytes;
                let line = self.cache.line_of(vaddr);
                if !self.lines_probed.contains(&line) {
                    let bank = self.cache.bank_of_line(line) as usize;
                    if self.banks_touched[bank] {
                        break; // bank busy this cycle; this stream waits
                    }
                    self.banks_touched[bank] = true;
                    self.lines_probed.push(line);
                }
                let outcomes = self
                    .cache
                    .access(vaddr, self.cfg.word_bytes)
                    .expect("streaming access stays within the bound extent");
                let mut ready = self.cycle + 1; // L1 hit latency
                for (line, hit) in outcomes {
                    if hit {
                        if let Some(&r) = self.line_ready.get(&line) {
                            ready = ready.max(r);
                        }
                    } else {
                        let done =
                            self.dram
                                .request(self.cycle, DramKind::Read, self.cache.line_bytes());
                        self.line_ready.insert(line, done);
                        ready = ready.max(done);
                    }
                }
                s.ready.push_back(ready);
                s.issue_pos += 1;
                budget -= 1;
            }
        }
        *issue_cursor = (*issue_cursor + 1) % n;
    }

    /// Delivers up to the distribution bandwidth of ready elements,
    /// round-robin across streams. Each delivery is one injection,
    /// multicast to however many leaves hold the fiber.
    fn deliver_step(
        &mut self,
        streams: &mut [KStream],
        rotation: &mut VecDeque<usize>,
        out: &mut Vec<(usize, usize)>,
    ) {
        out.clear();
        let mut stalled_in_a_row = 0;
        while out.len() < self.dn_bw && stalled_in_a_row < rotation.len() {
            let Some(&si) = rotation.front() else { break };
            let s = &mut streams[si];
            if s.delivered_all() {
                rotation.pop_front();
                stalled_in_a_row = 0;
                continue;
            }
            if s.ready.front().is_some_and(|&r| r <= self.cycle) {
                s.ready.pop_front();
                let elem = s.deliver_pos;
                s.deliver_pos += 1;
                self.str_read_bytes += self.cfg.word_bytes;
                if self.record_str_trace {
                    self.str_trace.push(elem as u64 * self.cfg.word_bytes);
                }
                out.push((si, elem));
                stalled_in_a_row = 0;
            } else {
                stalled_in_a_row += 1;
            }
            rotation.rotate_left(1);
        }
    }

    // ---- inner product ----------------------------------------------------

    fn stream_ip(&mut self, tile: &Tile) -> Result<()> {
        // (k, cluster, stationary value), sorted, for the intersection check.
        let mut k_map: Vec<(usize, usize, f64)> = Vec::with_capacity(tile.elems.len());
        for (ci, c) in tile.clusters.iter().enumerate() {
            for e in &tile.elems[c.elems.clone()] {
                k_map.push((e.k, ci, e.value));
            }
        }
        k_map.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

        let nnz = self.strm.nnz();
        self.str_fiber_requests += self.strm.major_dim() as u64;
        let mut streams = vec![KStream::new(0, 0..nnz)];
        let mut rotation: VecDeque<usize> = if nnz > 0 {
            VecDeque::from(vec![0])
        } else {
            VecDeque::new()
        };
        let mut issue_cursor = 0usize;

        let mut acc: Vec<(f64, u32)> = vec![(0.0, 0); tile.clusters.len()];
        let mut dirty: Vec<usize> = Vec::new();
        let mut cur_col = 0usize;
        let mut deliveries: Vec<(usize, usize)> = Vec::new();

        loop {
            self.issue_step(&mut streams, TOTAL_WINDOW_ELEMS, &mut issue_cursor);
            self.deliver_step(&mut streams, &mut rotation, &mut deliveries);
            for &(_, elem) in deliveries.iter() {
                while elem >= self.strm.ptr()[cur_col + 1] {
                    cur_col += 1;
                }
                let k = self.strm.idx()[elem];
                let bv = self.strm.val()[elem];
                // Scalar-scalar intersection against every cluster holding
                // coordinate k; misses still consumed read bandwidth.
                let start = k_map.partition_point(|e| e.0 < k);
                for &(kk, ci, av) in &k_map[start..] {
                    if kk != k {
                        break;
                    }
                    let slot = &mut acc[ci];
                    if slot.1 == 0 {
                        dirty.push(ci);
                    }
                    slot.0 += av * bv;
                    slot.1 += 1;
                }
                // Last element of the column: every cluster with effectual
                // products emits its completed dot product into the tree.
                if elem + 1 == self.strm.ptr()[cur_col + 1] {
                    dirty.sort_unstable();
                    for &ci in &dirty {
                        let (sum, _) = acc[ci];
                        acc[ci] = (0.0, 0);
                        self.pipe.push(
                            self.cycle,
                            PipeItem::Final {
                                row: tile.clusters[ci].row,
                                coord: cur_col,
                                value: sum,
                            },
                        );
                    }
                    dirty.clear();
                }
            }
            self.egress_step()?;
            if streams[0].delivered_all() && rotation.is_empty() && self.pipe.is_empty() {
                break;
            }
            self.tick(Phase::Streaming);
        }
        Ok(())
    }

    fn ip_flush_tile(&mut self, tile: &Tile) {
        for cluster in &tile.clusters {
            if !cluster.is_last_chunk {
                continue;
            }
            if let Some(fiber) = self.ip_stage.remove(&cluster.row) {
                for _ in 0..fiber.len() {
                    self.wbuf.push_element(self.cycle, &mut self.dram);
                }
                self.out_rows.insert(cluster.row, fiber);
            }
        }
    }

    // ---- outer product ----------------------------------------------------

    fn stream_op(&mut self, tile: &Tile) -> Result<()> {
        // Group the tile's stationary elements by k; compressed column
        // order keeps the groups contiguous.
        let mut streams: Vec<KStream> = Vec::new();
        let mut holders: Vec<Vec<(usize, f64)>> = Vec::new();
        for e in &tile.elems {
            if streams.last().map(|s: &KStream| s.k) == Some(e.k) {
                holders.last_mut().expect("parallel to streams").push((e.row, e.value));
            } else {
                streams.push(KStream::new(e.k, self.strm.ptr()[e.k]..self.strm.ptr()[e.k + 1]));
                holders.push(vec![(e.row, e.value)]);
            }
        }
        self.str_fiber_requests += streams.len() as u64;
        let mut rotation: VecDeque<usize> = (0..streams.len())
            .filter(|&i| !streams[i].delivered_all())
            .collect();
        let mut issue_cursor = 0usize;
        let window = (TOTAL_WINDOW_ELEMS / streams.len().max(1)).clamp(64, TOTAL_WINDOW_ELEMS);
        let mut deliveries: Vec<(usize, usize)> = Vec::new();

        loop {
            self.issue_step(&mut streams, window, &mut issue_cursor);
            self.deliver_step(&mut streams, &mut rotation, &mut deliveries);
            for i in 0..deliveries.len() {
                let (si, elem) = deliveries[i];
                let coord = self.strm.idx()[elem];
                let bv = self.strm.val()[elem];
                let k = streams[si].k;
                for &(row, av) in &holders[si] {
                    self.pipe.push(
                        self.cycle,
                        PipeItem::Psum { row, tag: k, coord, value: av * bv },
                    );
                }
            }
            self.egress_step()?;
            if rotation.is_empty() && self.pipe.is_empty() {
                break;
            }
            self.tick(Phase::Streaming);
        }
        Ok(())
    }

    // ---- Gustavson's ------------------------------------------------------

    fn stream_gust(&mut self, tile: &Tile) -> Result<()> {
        // Leaf l holds tile.elems[l]. Streams are shared per distinct k; a
        // delivery multicasts one product into every holding leaf.
        self.str_fiber_requests += tile.elems.len() as u64;
        let mut by_k: Vec<(usize, usize)> = tile
            .elems
            .iter()
            .enumerate()
            .map(|(leaf, e)| (e.k, leaf))
            .collect();
        by_k.sort_unstable();
        let mut streams: Vec<KStream> = Vec::new();
        let mut holders: Vec<Vec<usize>> = Vec::new();
        for (k, leaf) in by_k {
            if streams.last().map(|s: &KStream| s.k) == Some(k) {
                holders.last_mut().expect("parallel to streams").push(leaf);
            } else {
                streams.push(KStream::new(k, self.strm.ptr()[k]..self.strm.ptr()[k + 1]));
                holders.push(vec![leaf]);
            }
        }
        let mut leaf_q: Vec<VecDeque<Element>> = vec![VecDeque::new(); tile.elems.len()];
        let mut leaf_remaining: Vec<usize> = tile
            .elems
            .iter()
            .map(|e| self.strm.ptr()[e.k + 1] - self.strm.ptr()[e.k])
            .collect();
        // Clusters of rows split across tiles route through the psum
        // store, tagged by chunk; single-chunk rows emit final elements.
        let to_psram: Vec<Option<usize>> = tile
            .clusters
            .iter()
            .map(|c| {
                if c.is_last_chunk && c.chunk == 0 {
                    None
                } else {
                    Some(c.chunk)
                }
            })
            .collect();
        let mut cluster_done: Vec<bool> = tile
            .clusters
            .iter()
            .map(|c| c.elems.clone().all(|l| leaf_remaining[l] == 0))
            .collect();

        let mut rotation: VecDeque<usize> = (0..streams.len())
            .filter(|&i| !streams[i].delivered_all())
            .collect();
        let mut issue_cursor = 0usize;
        let window = (TOTAL_WINDOW_ELEMS / streams.len().max(1)).clamp(64, TOTAL_WINDOW_ELEMS);
        let mut deliveries: Vec<(usize, usize)> = Vec::new();

        loop {
            self.issue_step(&mut streams, window, &mut issue_cursor);
            self.deliver_step(&mut streams, &mut rotation, &mut deliveries);
            for i in 0..deliveries.len() {
                let (si, elem) = deliveries[i];
                let coord = self.strm.idx()[elem];
                let bv = self.strm.val()[elem];
                for &leaf in &holders[si] {
                    let av = tile.elems[leaf].value;
                    leaf_q[leaf].push_back(Element::new(coord, av * bv));
                    leaf_remaining[leaf] -= 1;
                }
            }

            // On-the-fly merge: each comparator cluster emits at most one
            // merged element per cycle, once every live leaf has a head.
            for (ci, cluster) in tile.clusters.iter().enumerate() {
                if cluster_done[ci] {
                    continue;
                }
                let mut min_coord = usize::MAX;
                let mut stalled = false;
                for l in cluster.elems.clone() {
                    match leaf_q[l].front() {
                        Some(e) => min_coord = min_coord.min(e.coord),
                        None if leaf_remaining[l] > 0 => {
                            stalled = true;
                            break;
                        }
                        None => {}
                    }
                }
                if stalled {
                    continue;
                }
                if min_coord == usize::MAX {
                    cluster_done[ci] = true;
                    continue;
                }
                let mut sum = 0.0;
                for l in cluster.elems.clone() {
                    if leaf_q[l].front().is_some_and(|e| e.coord == min_coord) {
                        sum += leaf_q[l].pop_front().expect("head checked").value;
                    }
                }
                let item = match to_psram[ci] {
                    None => PipeItem::Final { row: cluster.row, coord: min_coord, value: sum },
                    Some(chunk_tag) => PipeItem::Psum {
                        row: cluster.row,
                        tag: chunk_tag,
                        coord: min_coord,
                        value: sum,
                    },
                };
                self.pipe.push(self.cycle, item);
            }

            self.egress_step()?;
            let merges_drained = cluster_done.iter().all(|&d| d);
            if rotation.is_empty() && merges_drained && self.pipe.is_empty() {
                break;
            }
            self.tick(Phase::Streaming);
        }
        Ok(())
    }

    // ---- MRN egress and the write path --------------------------------

    /// Drains tree-root arrivals: final elements to the write path, psums
    /// to the psum store under its one-access-per-bank-per-cycle rule.
    fn egress_step(&mut self) -> Result<()> {
        let mut popped = 0usize;
        let mut psram_banks: Vec<bool> = Vec::new();
        while popped < self.mrn_bw {
            let Some(&item) = self.pipe.peek_ready(self.cycle) else {
                break;
            };
            match item {
                PipeItem::Final { row, coord, value } => {
                    match self.family {
                        Family::Ip => self.ip_stage_element(row, coord, value),
                        _ => {
                            self.out_rows
                                .entry(row)
                                .or_default()
                                .push(Element::new(coord, value));
                            self.wbuf.push_element(self.cycle, &mut self.dram);
                        }
                    }
                    self.pipe.pop_front();
                    popped += 1;
                }
                PipeItem::Psum { row, tag, coord, value } => {
                    match self.psram.partial_write(row, tag, Element::new(coord, value)) {
                        Ok(block) => {
                            if psram_banks.is_empty() {
                                psram_banks = vec![false; self.cfg.psram_banks];
                            }
                            let bank = self.psram.bank_of_block(block);
                            self.pipe.pop_front();
                            self.psum_count += 1;
                            if psram_banks[bank] {
                                // Second same-bank access this cycle: the
                                // write lands but further egress serializes.
                                break;
                            }
                            psram_banks[bank] = true;
                            popped += 1;
                        }
                        Err(cap) => {
                            // No free block: stall producers and compact
                            // the set by merging until space appears.
                            self.early_merge(cap.set)?;
                            break;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn ip_stage_element(&mut self, row: usize, coord: usize, value: f64) {
        let fiber = self.ip_stage.entry(row).or_default();
        // Chunked rows re-emit earlier coordinates on later tiles; fold
        // partial dot products together in the staging buffer.
        match fiber.binary_search_by_key(&coord, |e| e.coord) {
            Ok(i) => fiber[i].value += value,
            Err(i) => fiber.insert(i, Element::new(coord, value)),
        }
    }

    // ---- psum merging ---------------------------------------------------

    /// Merges every psum fiber of `row` through the comparator tree with
    /// the multipliers forwarding. More fibers than leaves take multiple
    /// passes, intermediate fibers going back to the psum store.
    fn merge_row(&mut self, row: usize, dest: MergeDest) -> Result<()> {
        loop {
            let tags = self.psram.row_tags(row);
            if tags.is_empty() {
                return Ok(());
            }
            if tags.len() <= self.n_mult {
                let fiber = self.merge_tags(row, &tags)?;
                match dest {
                    MergeDest::Output => {
                        for _ in 0..fiber.len() {
                            self.wbuf.push_element(self.cycle, &mut self.dram);
                        }
                        if !fiber.is_empty() {
                            self.out_rows.entry(row).or_default().extend(fiber);
                        }
                    }
                    MergeDest::WriteBack => self.write_back(row, fiber)?,
                }
                return Ok(());
            }
            // One grouping pass over the tree width.
            let groups: Vec<Vec<usize>> = tags.chunks(self.n_mult).map(<[usize]>::to_vec).collect();
            for group in groups {
                let fiber = self.merge_tags(row, &group)?;
                self.write_back(row, fiber)?;
            }
        }
    }

    /// Consumes the given (row, tag) fibers from the psum store through a
    /// k-way comparator merge. Cycle cost: one root emission per output
    /// element plus the tree latency, plus same-bank read conflicts among
    /// the fibers feeding one emission.
    fn merge_tags(&mut self, row: usize, tags: &[usize]) -> Result<Vec<Element>> {
        let mut heads: Vec<Option<(Element, usize)>> =
            tags.iter().map(|&k| self.psram.consume(row, k)).collect();
        let mut out: Vec<Element> = Vec::new();
        let mut bank_stalls = 0u64;
        let mut banks_seen: Vec<usize> = Vec::new();
        while heads.iter().any(Option::is_some) {
            let min_coord = heads
                .iter()
                .flatten()
                .map(|(e, _)| e.coord)
                .min()
                .expect("a head exists");
            let mut sum = 0.0;
            banks_seen.clear();
            for (i, head) in heads.iter_mut().enumerate() {
                if let Some((e, block)) = *head {
                    if e.coord == min_coord {
                        sum += e.value;
                        let bank = self.psram.bank_of_block(block);
                        if banks_seen.contains(&bank) {
                            bank_stalls += 1;
                        } else {
                            banks_seen.push(bank);
                        }
                        *head = self.psram.consume(row, tags[i]);
                    }
                }
            }
            out.push(Element::new(min_coord, sum));
        }
        let cycles = out.len() as u64 + self.depth + bank_stalls;
        self.cycle += cycles;
        self.phases.merging += cycles;
        Ok(out)
    }

    /// Returns a merged fiber to the psum store under a fresh tag.
    fn write_back(&mut self, row: usize, fiber: Vec<Element>) -> Result<()> {
        if fiber.is_empty() {
            return Ok(());
        }
        let tag = MERGE_TAG_BASE + self.merge_tag_counter;
        self.merge_tag_counter += 1;
        for e in fiber {
            self.psram.partial_write(row, tag, e).map_err(|_| {
                Error::Invariant("psum store ran out of space re-inserting a merged fiber".into())
            })?;
        }
        Ok(())
    }

    /// Capacity event: compact rows of the full set (fullest first) until
    /// a block frees up. Compaction merges a row's fibers into one. If no
    /// row can free a block, the workload does not fit this configuration.
    fn early_merge(&mut self, set: usize) -> Result<()> {
        for (row, _) in self.psram.rows_by_occupancy(set) {
            self.merge_row(row, MergeDest::WriteBack)?;
            if self.psram.free_blocks(set) > 0 {
                return Ok(());
            }
        }
        Err(Error::Config(format!(
            "psum store set {set} cannot hold the in-flight psums of this workload; \
             increase psram_bytes or psram_blocks_per_set"
        )))
    }

    // ---- result ---------------------------------------------------------

    fn into_result(self, d: Dataflow) -> Result<SimResult> {
        let mut ptr = Vec::with_capacity(self.out_m + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0usize);
        for row in 0..self.out_m {
            if let Some(fiber) = self.out_rows.get(&row) {
                for e in fiber {
                    idx.push(e.coord);
                    val.push(e.value);
                }
            }
            ptr.push(idx.len());
        }
        let c = CompressedMatrix::from_parts(MajorAxis::Row, self.out_m, self.out_n, ptr, idx, val)
            .map_err(|e| Error::Invariant(format!("engine built a malformed output: {e}")))?;
        let miss_rate = self.cache.miss_rate();
        Ok(SimResult {
            dataflow: d,
            c,
            cycles_total: self.phases.total(),
            cycles: self.phases,
            traffic: Traffic {
                sta_read: self.fifo.read_bytes,
                str_read: self.str_read_bytes,
                psram_write: self.psram.write_bytes,
                psram_read: self.psram.read_bytes,
                dram_read: self.dram.read_bytes,
                dram_write: self.dram.write_bytes,
            },
            str_cache: CacheStats {
                hits: self.cache.hits,
                misses: self.cache.misses,
                miss_rate,
            },
            psum_count: self.psum_count,
            ec_conversions: self.ec_conversions,
            tile_passes: self.tile_passes,
            str_fiber_requests: self.str_fiber_requests,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::Dataflow;
    use crate::sparse::{decompress, gen_sparse};

    fn cfg4() -> AcceleratorConfig {
        AcceleratorConfig {
            multipliers: 4,
            adders: 3,
            dn_bandwidth: 4,
            mrn_bandwidth: 4,
            str_cache_bytes: 4096,
            str_line_bytes: 64,
            str_assoc: 4,
            str_banks: 4,
            psram_bytes: 4 * 32 * 16,
            psram_sets: 4,
            psram_blocks_per_set: 32,
            psram_block_bytes: 16,
            psram_banks: 2,
            ..AcceleratorConfig::default()
        }
    }

    fn walkthrough() -> (DenseMatrix, DenseMatrix) {
        let a = DenseMatrix::from_rows(&[&[0.0, 2.0, 0.0, 0.0], &[3.0, 0.0, 4.0, 5.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[
            &[0.0, 7.0, 0.0, 1.0],
            &[2.0, 0.0, 6.0, 0.0],
            &[5.0, 3.0, 0.0, 0.0],
            &[4.0, 0.0, 8.0, 9.0],
        ])
        .unwrap();
        (a, b)
    }

    fn run_dense(
        a: &DenseMatrix,
        b: &DenseMatrix,
        d: Dataflow,
        cfg: &AcceleratorConfig,
    ) -> SimResult {
        let layer = LayerSpec::from_dense(a, b, d).unwrap();
        run_layer(&layer, d, cfg).unwrap()
    }

    #[test]
    fn walkthrough_matches_dense_oracle_on_all_six_dataflows() {
        let (a, b) = walkthrough();
        let want = a.matmul(&b).unwrap();
        for d in Dataflow::ALL {
            let res = run_dense(&a, &b, d, &cfg4());
            assert_eq!(decompress(&res.c).unwrap(), want, "{d:?}");
            assert!(res.cycles_total > 0);
        }
    }

    #[test]
    fn identity_operand_reproduces_a() {
        let mut eye = DenseMatrix::zeros(4, 4).unwrap();
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        let a = gen_sparse(3, 4, 0.4, 5).unwrap();
        for d in Dataflow::ALL {
            let res = run_dense(&a, &eye, d, &cfg4());
            assert_eq!(decompress(&res.c).unwrap(), a, "{d:?}");
        }
    }

    #[test]
    fn random_layers_match_dense_oracle() {
        let cfg = AcceleratorConfig::default();
        for seed in 0..8 {
            let a = gen_sparse(9, 7, 0.6, seed).unwrap();
            let b = gen_sparse(7, 11, 0.5, seed + 100).unwrap();
            let want = a.matmul(&b).unwrap();
            for d in Dataflow::ALL {
                let res = run_dense(&a, &b, d, &cfg);
                assert_eq!(decompress(&res.c).unwrap(), want, "{d:?} seed {seed}");
            }
        }
    }

    #[test]
    fn inner_product_never_touches_psum_store() {
        let (a, b) = walkthrough();
        for d in [Dataflow::IpM, Dataflow::IpN] {
            let res = run_dense(&a, &b, d, &cfg4());
            assert_eq!(res.traffic.psram_write, 0, "{d:?}");
            assert_eq!(res.traffic.psram_read, 0, "{d:?}");
            assert_eq!(res.cycles.merging, 0, "{d:?}");
            assert_eq!(res.psum_count, 0, "{d:?}");
        }
    }

    #[test]
    fn stationary_traffic_is_read_once() {
        let (a, b) = walkthrough();
        for d in Dataflow::ALL {
            let res = run_dense(&a, &b, d, &cfg4());
            let sta_nnz = if d.is_m_stationary() {
                compress(&a, MajorAxis::Row).nnz()
            } else {
                compress(&b, MajorAxis::Row).nnz()
            };
            assert_eq!(res.traffic.sta_read, sta_nnz as u64 * 4, "{d:?}");
        }
    }

    #[test]
    fn output_major_axis_follows_stationarity() {
        let (a, b) = walkthrough();
        for d in Dataflow::ALL {
            let res = run_dense(&a, &b, d, &cfg4());
            let want = if d.is_m_stationary() { MajorAxis::Row } else { MajorAxis::Col };
            assert_eq!(res.c.major(), want, "{d:?}");
        }
    }

    #[test]
    fn empty_operands_produce_empty_results_in_zero_cycles() {
        let z = DenseMatrix::zeros(3, 5).unwrap();
        let b = gen_sparse(5, 4, 0.5, 1).unwrap();
        for d in Dataflow::ALL {
            let res = run_dense(&z, &b, d, &cfg4());
            assert_eq!(res.c.nnz(), 0, "{d:?}");
            if d.is_m_stationary() {
                assert_eq!(res.cycles_total, 0, "{d:?}: no stationary work, no cycles");
            }
        }
    }

    #[test]
    fn determinism_bit_for_bit() {
        let a = gen_sparse(16, 12, 0.6, 3).unwrap();
        let b = gen_sparse(12, 20, 0.7, 4).unwrap();
        for d in Dataflow::ALL {
            let r1 = run_dense(&a, &b, d, &cfg4());
            let r2 = run_dense(&a, &b, d, &cfg4());
            assert_eq!(r1.cycles, r2.cycles);
            assert_eq!(r1.traffic, r2.traffic);
            assert_eq!(r1.c, r2.c);
        }
    }

    #[test]
    fn n_variant_equals_swapped_transposed_m_variant() {
        let a = gen_sparse(10, 6, 0.5, 7).unwrap();
        let b = gen_sparse(6, 9, 0.6, 8).unwrap();
        let at = a.transposed();
        let bt = b.transposed();
        for (dn, dm) in [
            (Dataflow::IpN, Dataflow::IpM),
            (Dataflow::OpN, Dataflow::OpM),
            (Dataflow::GustN, Dataflow::GustM),
        ] {
            let rn = run_dense(&a, &b, dn, &cfg4());
            let rm = run_dense(&bt, &at, dm, &cfg4());
            assert_eq!(rn.cycles_total, rm.cycles_total, "{dn:?}");
            assert_eq!(rn.traffic, rm.traffic, "{dn:?}");
            assert_eq!(
                decompress(&rn.c).unwrap(),
                decompress(&rm.c).unwrap().transposed(),
                "{dn:?}"
            );
        }
    }

    #[test]
    fn op_and_gust_read_the_same_streaming_multiset_when_single_tile() {
        // With A fitting one tile, both dataflows fetch each needed row of
        // B exactly once; only the interleaving differs.
        let a = gen_sparse(4, 8, 0.9, 11).unwrap(); // few nonzeros, one tile
        let b = gen_sparse(8, 10, 0.4, 12).unwrap();
        let cfg = cfg4();
        let layer_op = LayerSpec::from_dense(&a, &b, Dataflow::OpM).unwrap();
        let layer_gust = LayerSpec::from_dense(&a, &b, Dataflow::GustM).unwrap();
        let (op, mut t_op) = run_layer_traced(&layer_op, Dataflow::OpM, &cfg).unwrap();
        let (gust, mut t_gust) = run_layer_traced(&layer_gust, Dataflow::GustM, &cfg).unwrap();
        assert_eq!(op.tile_passes, 1);
        t_op.sort_unstable();
        t_gust.sort_unstable();
        assert_eq!(t_op, t_gust);
        assert!(op.psum_count >= gust.c.nnz() as u64 || gust.psum_count == 0);
    }

    #[test]
    fn gust_single_tile_bypasses_psum_store() {
        let (a, b) = walkthrough();
        let res = run_dense(&a, &b, Dataflow::GustM, &cfg4());
        assert_eq!(res.tile_passes, 1);
        assert_eq!(res.traffic.psram_write, 0);
        assert_eq!(res.cycles.merging, 0);
        assert_eq!(res.psum_count, 0);
    }

    #[test]
    fn gust_fiber_requests_one_per_stationary_element() {
        let (a, b) = walkthrough();
        let res = run_dense(&a, &b, Dataflow::GustM, &cfg4());
        assert_eq!(res.str_fiber_requests, 4);
    }

    #[test]
    fn op_stationary_pops_equal_stationary_nnz() {
        let (a, b) = walkthrough();
        let res = run_dense(&a, &b, Dataflow::OpM, &cfg4());
        assert_eq!(res.traffic.sta_read / 4, 4);
    }

    #[test]
    fn split_rows_accumulate_across_tiles() {
        // One 10-element row on a 4-multiplier machine: IP accumulates
        // partial dot products in the writer, Gust merges partial fibers
        // through the psum store.
        let mut a = DenseMatrix::zeros(1, 10).unwrap();
        for j in 0..10 {
            a.set(0, j, (j + 1) as f64);
        }
        let b = gen_sparse(10, 6, 0.3, 9).unwrap();
        let want = a.matmul(&b).unwrap();
        let ip = run_dense(&a, &b, Dataflow::IpM, &cfg4());
        assert_eq!(decompress(&ip.c).unwrap(), want);
        assert_eq!(ip.traffic.psram_write, 0);
        assert_eq!(ip.tile_passes, 3);
        let gust = run_dense(&a, &b, Dataflow::GustM, &cfg4());
        assert_eq!(decompress(&gust.c).unwrap(), want);
        assert!(gust.traffic.psram_write > 0, "partial fibers round-trip");
        assert!(gust.cycles.merging > 0);
    }

    #[test]
    fn psum_capacity_forces_early_merge_not_failure() {
        // Tiny psum store: 1 set, 4 blocks of 2 elements. A dense outer
        // product overflows it immediately and survives via compaction.
        let cfg = AcceleratorConfig {
            multipliers: 4,
            adders: 3,
            dn_bandwidth: 4,
            mrn_bandwidth: 4,
            psram_bytes: 32,
            psram_sets: 1,
            psram_blocks_per_set: 4,
            psram_block_bytes: 8,
            psram_banks: 1,
            ..AcceleratorConfig::default()
        };
        let a = gen_sparse(1, 6, 0.0, 2).unwrap();
        let b = gen_sparse(6, 5, 0.2, 3).unwrap();
        let want = a.matmul(&b).unwrap();
        let res = run_dense(&a, &b, Dataflow::OpM, &cfg);
        assert_eq!(decompress(&res.c).unwrap(), want);
        assert!(res.traffic.psram_read > res.c.nnz() as u64 * 4, "compaction re-read psums");
    }

    #[test]
    fn ec_conversion_counted_and_charged() {
        let (a, b) = walkthrough();
        // OP(M) wants A in compressed-column form; hand it row-major.
        let layer = LayerSpec::new(
            compress(&a, MajorAxis::Row),
            compress(&b, MajorAxis::Row),
            None,
        )
        .unwrap();
        let res = run_layer(&layer, Dataflow::OpM, &AcceleratorConfig::default()).unwrap();
        assert_eq!(res.ec_conversions, 1);
        assert!(res.cycles.conversion > 0);
        assert_eq!(decompress(&res.c).unwrap(), a.matmul(&b).unwrap());
    }

    #[test]
    fn zero_work_cycle_advance() {
        let cfg = cfg4();
        let mut eng = Engine::new(&cfg, Family::Ip).unwrap();
        let before = eng.cycle;
        eng.tick(Phase::Streaming);
        assert_eq!(eng.cycle, before + 1);
        assert_eq!(eng.phases.streaming, 1);
        assert_eq!(eng.str_read_bytes, 0);
    }

    #[test]
    fn single_product_crosses_tree_depth() {
        // A 1x1 by 1x1 product must spend at least the tree latency in
        // the streaming phase before the result egresses.
        let a = gen_sparse(1, 1, 0.0, 1).unwrap();
        let b = gen_sparse(1, 1, 0.0, 2).unwrap();
        let cfg = cfg4();
        let res = run_dense(&a, &b, Dataflow::IpM, &cfg);
        assert!(res.cycles.streaming > cfg.tree_depth());
    }

    #[test]
    fn stored_zero_outputs_compare_equal_to_absent() {
        // Values that cancel stay in the compressed output but decompress
        // to the same dense matrix.
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[&[5.0], &[-5.0]]).unwrap();
        let want = a.matmul(&b).unwrap();
        for d in [Dataflow::OpM, Dataflow::GustM, Dataflow::IpM] {
            let res = run_dense(&a, &b, d, &cfg4());
            assert_eq!(decompress(&res.c).unwrap(), want, "{d:?}");
        }
    }
}
