//! The L1 memory structures and the DRAM model.
//!
//! Three structures serve the three operand roles: a read-once FIFO for
//! the stationary matrix, a read-only set-associative cache for the
//! streaming matrix and a set/block-organized psum store for partial
//! output fibers. A small write buffer hides the latency of final output
//! fibers on their way to DRAM. All structures count their own traffic.

mod cache;
mod dram;
mod fifo;
mod psram;

pub use cache::StrCache;
pub use dram::{DramKind, DramModel};
pub use fifo::StaFifo;
pub use psram::{Psram, PsramCapacity};

use crate::sparse::ELEMENT_WORD_BYTES;

/// Output write buffer: final elements queue here and drain to DRAM in
/// chunks so the compute side never waits on write latency directly.
#[derive(Debug)]
pub struct WriteBuffer {
    chunk_bytes: u64,
    staged_bytes: u64,
    /// Completion cycle of the most recent drain request.
    pub last_completion: u64,
    /// Elements pushed over the run.
    pub written_elems: u64,
}

impl WriteBuffer {
    pub fn new(chunk_bytes: u64) -> WriteBuffer {
        WriteBuffer {
            chunk_bytes: chunk_bytes.max(ELEMENT_WORD_BYTES),
            staged_bytes: 0,
            last_completion: 0,
            written_elems: 0,
        }
    }

    /// Stages one output element; drains a chunk when enough are buffered.
    pub fn push_element(&mut self, now: u64, dram: &mut DramModel) {
        self.written_elems += 1;
        self.staged_bytes += ELEMENT_WORD_BYTES;
        if self.staged_bytes >= self.chunk_bytes {
            self.drain(now, dram);
        }
    }

    /// Issues a DRAM write for everything currently staged.
    pub fn drain(&mut self, now: u64, dram: &mut DramModel) {
        if self.staged_bytes > 0 {
            let done = dram.request(now, DramKind::Write, self.staged_bytes);
            self.last_completion = self.last_completion.max(done);
            self.staged_bytes = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_traffic_counts_element_bytes() {
        let mut dram = DramModel::new(0, 320);
        let mut wb = WriteBuffer::new(64);
        for _ in 0..100 {
            wb.push_element(0, &mut dram);
        }
        wb.drain(0, &mut dram);
        assert_eq!(dram.write_bytes, 400);
    }

    #[test]
    fn drain_takes_at_least_latency_plus_one() {
        let mut dram = DramModel::new(80, 320);
        let mut wb = WriteBuffer::new(512);
        for _ in 0..80 {
            wb.push_element(5, &mut dram); // 320 bytes staged
        }
        wb.drain(5, &mut dram);
        assert!(wb.last_completion >= 5 + 1 + 80);
    }

    #[test]
    fn empty_output_is_zero_traffic() {
        let mut dram = DramModel::new(10, 320);
        let mut wb = WriteBuffer::new(64);
        wb.drain(0, &mut dram);
        assert_eq!(dram.write_bytes, 0);
        assert_eq!(wb.last_completion, 0);
    }
}
