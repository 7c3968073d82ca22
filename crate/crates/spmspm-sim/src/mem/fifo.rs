//! Read-once FIFO for the stationary matrix.
//!
//! The structure holds a DRAM base register and fills itself implicitly:
//! the filler requests the next chunk whenever the previous one has been
//! consumed, so the reader only ever pops. Every element of the bound
//! stream is popped exactly once per tile pass.

use super::{DramKind, DramModel};
use crate::sparse::ELEMENT_WORD_BYTES;
use crate::{Error, Result};

#[derive(Debug)]
pub struct StaFifo {
    capacity_bytes: u64,
    /// Elements fetched from DRAM and not yet popped.
    buffered: u64,
    /// Elements of the bound stream not yet requested from DRAM.
    unfetched: u64,
    /// Completion cycle and size of the in-flight refill, if any.
    pending: Option<(u64, u64)>,
    /// Bytes popped by the reader (on-chip stationary traffic).
    pub read_bytes: u64,
    /// Bytes fetched from DRAM into the FIFO.
    pub fill_bytes: u64,
}

impl StaFifo {
    pub fn new(capacity_bytes: u64) -> StaFifo {
        StaFifo {
            capacity_bytes: capacity_bytes.max(ELEMENT_WORD_BYTES),
            buffered: 0,
            unfetched: 0,
            pending: None,
            read_bytes: 0,
            fill_bytes: 0,
        }
    }

    /// Binds the FIFO to a stationary stream of `n_elements`, replacing
    /// any previous binding. The base-address register points at the
    /// stream; fibers are pushed implicitly from there.
    pub fn bind(&mut self, n_elements: u64) {
        self.buffered = 0;
        self.unfetched = n_elements;
        self.pending = None;
    }

    pub fn available(&self) -> u64 {
        self.buffered
    }

    pub fn exhausted(&self) -> bool {
        self.buffered == 0 && self.unfetched == 0 && self.pending.is_none()
    }

    /// Advances the filler: completes an arrived refill and issues the
    /// next one. Call once per cycle.
    pub fn step(&mut self, now: u64, dram: &mut DramModel) {
        if let Some((ready, elems)) = self.pending {
            if ready <= now {
                self.buffered += elems;
                self.pending = None;
            }
        }
        if self.pending.is_none() && self.unfetched > 0 {
            let free = self.capacity_bytes / ELEMENT_WORD_BYTES - self.buffered;
            let chunk = free.min(self.unfetched);
            if chunk > 0 {
                let bytes = chunk * ELEMENT_WORD_BYTES;
                let done = dram.request(now, DramKind::Read, bytes);
                self.fill_bytes += bytes;
                self.unfetched -= chunk;
                self.pending = Some((done, chunk));
            }
        }
    }

    /// Pops the next stationary element in fiber order. Popping past the
    /// end of the bound stream is a controller bug.
    pub fn pop(&mut self) -> Result<()> {
        if self.buffered == 0 {
            if self.unfetched == 0 && self.pending.is_none() {
                return Err(Error::Invariant(
                    "popped stationary FIFO past the end of its stream".into(),
                ));
            }
            return Err(Error::Invariant("popped an empty stationary FIFO".into()));
        }
        self.buffered -= 1;
        self.read_bytes += ELEMENT_WORD_BYTES;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(fifo: &mut StaFifo, dram: &mut DramModel) -> u64 {
        let mut pops = 0;
        let mut now = 0;
        while !fifo.exhausted() {
            fifo.step(now, dram);
            while fifo.available() > 0 {
                fifo.pop().unwrap();
                pops += 1;
            }
            now += 1;
        }
        pops
    }

    #[test]
    fn exactly_n_pops_then_error() {
        let mut dram = DramModel::new(0, 320);
        let mut fifo = StaFifo::new(256);
        fifo.bind(4);
        let pops = drain(&mut fifo, &mut dram);
        assert_eq!(pops, 4);
        assert!(fifo.pop().is_err());
    }

    #[test]
    fn traffic_after_full_drain_is_nnz_times_word() {
        let mut dram = DramModel::new(2, 320);
        let mut fifo = StaFifo::new(256);
        fifo.bind(100);
        drain(&mut fifo, &mut dram);
        assert_eq!(fifo.read_bytes, 400);
        assert_eq!(fifo.fill_bytes, 400);
        assert_eq!(dram.read_bytes, 400);
    }

    #[test]
    fn empty_stream_zero_traffic() {
        let mut dram = DramModel::new(0, 320);
        let mut fifo = StaFifo::new(256);
        fifo.bind(0);
        assert!(fifo.exhausted());
        assert_eq!(drain(&mut fifo, &mut dram), 0);
        assert_eq!(fifo.read_bytes, 0);
        assert!(fifo.pop().is_err());
    }

    #[test]
    fn refills_in_capacity_chunks() {
        let mut dram = DramModel::new(0, 320);
        let mut fifo = StaFifo::new(64); // 16 elements
        fifo.bind(40);
        drain(&mut fifo, &mut dram);
        // 16 + 16 + 8 element chunks
        assert_eq!(dram.requests, 3);
        assert_eq!(fifo.read_bytes, 160);
    }
}
