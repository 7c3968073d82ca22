//! Fixed-latency, bandwidth-serialized DRAM model.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DramKind {
    Read,
    Write,
}

/// Single-channel DRAM with a FIFO request queue. Requests serialize on
/// bandwidth (one occupies the bus for `ceil(bytes / bytes_per_cycle)`
/// cycles) but their access latencies overlap, so a stream of requests
/// completes one bus-slot apart after the first.
#[derive(Debug)]
pub struct DramModel {
    latency_cycles: u64,
    bytes_per_cycle: u64,
    bus_free_at: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub requests: u64,
}

impl DramModel {
    pub fn new(latency_cycles: u64, bytes_per_cycle: u64) -> DramModel {
        DramModel {
            latency_cycles,
            bytes_per_cycle: bytes_per_cycle.max(1),
            bus_free_at: 0,
            read_bytes: 0,
            write_bytes: 0,
            requests: 0,
        }
    }

    pub fn latency_cycles(&self) -> u64 {
        self.latency_cycles
    }

    pub fn bytes_per_cycle(&self) -> u64 {
        self.bytes_per_cycle
    }

    /// Issues a request of `bytes > 0` at cycle `now`; returns the cycle
    /// the data is available (reads) or durable (writes).
    pub fn request(&mut self, now: u64, kind: DramKind, bytes: u64) -> u64 {
        debug_assert!(bytes > 0);
        let slot_start = self.bus_free_at.max(now);
        let occupancy = bytes.div_ceil(self.bytes_per_cycle);
        self.bus_free_at = slot_start + occupancy;
        self.requests += 1;
        match kind {
            DramKind::Read => self.read_bytes += bytes,
            DramKind::Write => self.write_bytes += bytes,
        }
        self.bus_free_at + self.latency_cycles
    }

    /// Cycle conversion helpers for the configured clock.
    pub fn latency_from_ns(ns: u64, clock_mhz: u64) -> u64 {
        // cycles = ns * MHz / 1000, rounded to nearest
        (ns * clock_mhz + 500) / 1000
    }

    pub fn bandwidth_from_gbps(gbps: u64, clock_mhz: u64) -> u64 {
        // bytes/cycle = GB/s * 1e9 / (MHz * 1e6) = gbps * 1000 / mhz
        ((gbps * 1000 + clock_mhz / 2) / clock_mhz).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fetch_at_table_parameters() {
        // 100 ns at 800 MHz is 80 cycles; 256 GB/s at 800 MHz is 320 B/cycle.
        assert_eq!(DramModel::latency_from_ns(100, 800), 80);
        assert_eq!(DramModel::bandwidth_from_gbps(256, 800), 320);
        let mut d = DramModel::new(80, 320);
        // A 128-byte line: one occupancy cycle plus the 80-cycle latency.
        assert_eq!(d.request(0, DramKind::Read, 128), 81);
    }

    #[test]
    fn zero_latency_single_slot() {
        let mut d = DramModel::new(0, 320);
        assert_eq!(d.request(0, DramKind::Read, 320), 1);
    }

    #[test]
    fn bandwidth_serializes_simultaneous_requests() {
        let mut d = DramModel::new(80, 320);
        let first = d.request(0, DramKind::Read, 320);
        let second = d.request(0, DramKind::Read, 320);
        assert_eq!(second, first + 1);
    }

    #[test]
    fn latency_overlaps_across_requests() {
        let mut d = DramModel::new(100, 64);
        let a = d.request(0, DramKind::Read, 64);
        let b = d.request(0, DramKind::Read, 64);
        let c = d.request(0, DramKind::Read, 64);
        assert_eq!((a, b, c), (101, 102, 103));
    }

    #[test]
    fn counters_split_by_kind() {
        let mut d = DramModel::new(0, 64);
        d.request(0, DramKind::Read, 100);
        d.request(0, DramKind::Write, 60);
        assert_eq!((d.read_bytes, d.write_bytes), (100, 60));
    }
}
