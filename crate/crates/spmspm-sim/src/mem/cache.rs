//! Read-only set-associative cache for the streaming matrix.
//!
//! The cache operates on a virtual address space relative to the start of
//! the streaming matrix, which keeps tags short. Replacement is LRU within
//! a set, fill-on-miss, no prefetch and no dirty state. Banks never change
//! what hits or misses; they only serialize same-cycle accesses, which the
//! engine charges separately.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
struct LineSlot {
    valid: bool,
    tag: u64,
    last_used: u64,
}

#[derive(Debug)]
pub struct StrCache {
    line_bytes: u64,
    n_sets: u64,
    n_banks: u64,
    extent_bytes: u64,
    sets: Vec<Vec<LineSlot>>,
    stamp: u64,
    pub hits: u64,
    pub misses: u64,
    /// Bytes fetched from DRAM on misses: `misses * line_bytes`.
    pub fill_bytes: u64,
}

impl StrCache {
    pub fn new(size_bytes: u64, line_bytes: u64, assoc: usize, n_banks: u64) -> Result<StrCache> {
        if line_bytes == 0 || assoc == 0 || n_banks == 0 {
            return Err(Error::Config("cache geometry fields must be positive".into()));
        }
        if size_bytes % (line_bytes * assoc as u64) != 0 {
            return Err(Error::Config(format!(
                "cache size {size_bytes} is not a multiple of line_bytes*assoc"
            )));
        }
        let n_sets = size_bytes / (line_bytes * assoc as u64);
        if n_sets == 0 {
            return Err(Error::Config("cache must have at least one set".into()));
        }
        Ok(StrCache {
            line_bytes,
            n_sets,

            n_banks,
            extent_bytes: u64::MAX,
            sets: vec![vec![LineSlot::default(); assoc]; n_sets as usize],
            stamp: 0,
            hits: 0,
            misses: 0,
            fill_bytes: 0,
        })
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    /// Restricts the valid address range to the streaming matrix extent
    /// and invalidates all contents (a new matrix is being streamed).
    pub fn bind_extent(&mut self, extent_bytes: u64) {
        self.extent_bytes = extent_bytes;
        for set in &mut self.sets {
            for slot in set {
                slot.valid = false;
            }
        }
    }

    pub fn line_of(&self, vaddr: u64) -> u64 {
        vaddr / self.line_bytes
    }

    /// Bank serving a given line.
    pub fn bank_of_line(&self, line: u64) -> u64 {
        line % self.n_banks
    }

    /// Accesses `bytes` starting at `vaddr`, decomposing across line
    /// boundaries. Returns `(line, hit)` per touched line in order. A miss
    /// installs the line immediately (LRU victim) and counts fill traffic;
    /// the caller models fetch timing.
    pub fn access(&mut self, vaddr: u64, bytes: u64) -> Result<Vec<(u64, bool)>> {
        if bytes == 0 {
            return Ok(vec![]);
        }
        if vaddr.checked_add(bytes).is_none_or(|end| end > self.extent_bytes) {
            return Err(Error::Input(format!(
                "streaming access [{vaddr}, +{bytes}) outside matrix extent {}",
                self.extent_bytes
            )));
        }
        let first = self.line_of(vaddr);
        let last = self.line_of(vaddr + bytes - 1);
        let mut out = Vec::with_capacity((last - first + 1) as usize);
        for line in first..=last {
            out.push((line, self.touch_line(line)));
        }
        Ok(out)
    }

    fn touch_line(&mut self, line: u64) -> bool {
        self.stamp += 1;
        let set_idx = (line % self.n_sets) as usize;
        let tag = line / self.n_sets;
        let set = &mut self.sets[set_idx];
        if let Some(slot) = set.iter_mut().find(|s| s.valid && s.tag == tag) {
            slot.last_used = self.stamp;
            self.hits += 1;
            return true;
        }
        self.misses += 1;
        self.fill_bytes += self.line_bytes;
        let victim = set
            .iter_mut()
            .min_by_key(|s| if s.valid { s.last_used } else { 0 })
            .expect("assoc > 0");
        *victim = LineSlot {
            valid: true,
            tag,
            last_used: self.stamp,
        };
        false
    }

    pub fn miss_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.misses as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StrCache {
        // 4 sets x 2 ways x 64-byte lines
        StrCache::new(512, 64, 2, 4).unwrap()
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut c = small();
        assert_eq!(c.access(0, 4).unwrap(), vec![(0, false)]);
        assert_eq!(c.access(0, 4).unwrap(), vec![(0, true)]);
        assert_eq!((c.hits, c.misses), (1, 1));
    }

    #[test]
    fn conflict_evicts_lru_line() {
        // 17 distinct lines mapped to one set of a 16-way cache: one
        // eviction, and re-reading the first line misses again.
        let mut c = StrCache::new(16 * 128 * 1, 128, 16, 1).unwrap(); // 1 set
        for i in 0..17u64 {
            c.access(i * 128, 4).unwrap();
        }
        assert_eq!(c.misses, 17);
        let again = c.access(0, 4).unwrap();
        assert_eq!(again[0].1, false);
    }

    #[test]
    fn sequential_scan_spatial_locality() {
        let mut c = StrCache::new(1 << 20, 128, 16, 16).unwrap();
        let mut misses = 0;
        for addr in (0..1280).step_by(4) {
            let r = c.access(addr, 4).unwrap();
            misses += r.iter().filter(|(_, hit)| !hit).count();
        }
        assert_eq!(misses, 10);
    }

    #[test]
    fn access_spanning_lines_decomposes() {
        let mut c = small();
        let r = c.access(60, 8).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].0, r[1].0), (0, 1));
    }

    #[test]
    fn out_of_extent_rejected() {
        let mut c = small();
        c.bind_extent(100);
        assert!(c.access(98, 4).is_err());
        assert!(c.access(96, 4).is_ok());
    }

    #[test]
    fn fill_bytes_is_misses_times_line() {
        let mut c = small();
        for i in 0..9u64 {
            c.access(i * 64, 4).unwrap();
        }
        assert_eq!(c.fill_bytes, c.misses * 64);
    }

    /// Reference LRU simulator: vector of (tag, stamp) per set, linear
    /// scans only. Used to cross-check the cache cycle-for-cycle.
    pub(crate) struct RefLru {
        line_bytes: u64,
        n_sets: u64,
        assoc: usize,
        time: u64,
        sets: Vec<Vec<(u64, u64)>>,
    }

    impl RefLru {
        pub(crate) fn new(size: u64, line: u64, assoc: usize) -> RefLru {
            let n_sets = size / (line * assoc as u64);
            RefLru {
                line_bytes: line,
                n_sets,
                assoc,
                time: 0,
                sets: vec![Vec::new(); n_sets as usize],
            }
        }

        pub(crate) fn access(&mut self, vaddr: u64) -> bool {
            self.time += 1;
            let line = vaddr / self.line_bytes;
            let set = (line % self.n_sets) as usize;
            let tag = line / self.n_sets;
            let entries = &mut self.sets[set];
            if let Some(e) = entries.iter_mut().find(|e| e.0 == tag) {
                e.1 = self.time;
                return true;
            }
            if entries.len() == self.assoc {
                let oldest = entries
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, e)| e.1)
                    .map(|(i, _)| i)
                    .unwrap();
                entries.remove(oldest);
            }
            entries.push((tag, self.time));
            false
        }
    }

    #[test]
    fn matches_reference_lru_on_random_traces() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for trace in 0..50 {
            let mut c = StrCache::new(2048, 64, 4, 4).unwrap();
            let mut r = RefLru::new(2048, 64, 4);
            for _ in 0..400 {
                let vaddr = rng() % 16384;
                let got = c.access(vaddr, 1).unwrap()[0].1;
                let want = r.access(vaddr);
                assert_eq!(got, want, "trace {trace}");
            }
        }
    }

    #[test]
    fn doubling_associativity_never_adds_misses() {
        // LRU inclusion at a fixed set count: growing the cache by adding
        // ways can only remove misses on any fixed trace.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..20 {
            let trace: Vec<u64> = (0..300).map(|_| rng() % 8192).collect();
            let mut small = StrCache::new(1024, 64, 2, 4).unwrap();
            let mut big = StrCache::new(2048, 64, 4, 4).unwrap();
            for &a in &trace {
                small.access(a, 1).unwrap();
                big.access(a, 1).unwrap();
            }
            assert!(big.misses <= small.misses);
        }
    }

    #[test]
    fn bank_mapping_is_stable() {
        let c = small();
        assert_eq!(c.bank_of_line(0), 0);
        assert_eq!(c.bank_of_line(5), 1);
    }
}
