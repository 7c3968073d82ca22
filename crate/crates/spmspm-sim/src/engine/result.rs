//! Simulation result records.

use serde::Serialize;

use crate::dataflow::Dataflow;
use crate::sparse::CompressedMatrix;

/// Cycle breakdown by execution phase. Format-conversion cycles cover
/// explicit CSR<->CSC conversions charged against the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PhaseCycles {
    pub stationary: u64,
    pub streaming: u64,
    pub merging: u64,
    pub conversion: u64,
}

impl PhaseCycles {
    pub fn total(&self) -> u64 {
        self.stationary + self.streaming + self.merging + self.conversion
    }
}

/// On-chip and off-chip byte counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub sta_read: u64,
    pub str_read: u64,
    pub psram_write: u64,
    pub psram_read: u64,
    pub dram_read: u64,
    pub dram_write: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
}

/// Everything a layer run produces: the output matrix, cycles, traffic
/// and the counters behind the evaluation plots.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub dataflow: Dataflow,
    pub c: CompressedMatrix,
    pub cycles_total: u64,
    pub cycles: PhaseCycles,
    pub traffic: Traffic,
    pub str_cache: CacheStats,
    /// Psums sent to the psum store during streaming.
    pub psum_count: u64,
    /// Explicit format conversions performed for this run.
    pub ec_conversions: u64,
    /// Stationary tiles executed.
    pub tile_passes: u64,
    /// Streaming-fiber requests issued by the streaming tile reader.
    pub str_fiber_requests: u64,
}
