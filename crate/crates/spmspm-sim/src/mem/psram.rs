//! Psum store: sets of k-tagged blocks with valid bits and First/Last
//! cursors.
//!
//! The store is indexed by output row (set = row mod n_sets). Each block
//! holds a contiguous segment of one (row, k) psum fiber; a fiber that
//! outgrows its block chains into further blocks of the same set in
//! allocation order, even when other k tags occupy the blocks in between.
//! `partial_write` appends at the Last cursor; `consume` reads and erases
//! at the First cursor and invalidates a block once drained. Blocks are
//! spread over banks for parallel fiber reads during merging.

use crate::sparse::{Element, ELEMENT_WORD_BYTES};
use crate::{Error, Result};

/// Signal that a set has no free block left. The engine reacts by merging
/// (never by dropping data).
#[derive(Debug, Clone, Copy)]
pub struct PsramCapacity {
    pub set: usize,
}

#[derive(Debug, Clone)]
struct Block {
    valid: bool,
    row: usize,
    k_tag: usize,
    first: usize,
    last: usize,
    alloc_seq: u64,
    data: Vec<Element>,
}

impl Block {
    fn free() -> Block {
        Block {
            valid: false,
            row: 0,
            k_tag: 0,
            first: 0,
            last: 0,
            alloc_seq: 0,
            data: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct Psram {
    n_sets: usize,
    blocks_per_set: usize,
    block_elems: usize,
    n_banks: usize,
    sets: Vec<Vec<Block>>,
    alloc_counter: u64,
    pub written_elems: u64,
    pub consumed_elems: u64,
    pub write_bytes: u64,
    pub read_bytes: u64,
}

impl Psram {
    pub fn new(
        n_sets: usize,
        blocks_per_set: usize,
        block_bytes: usize,
        n_banks: usize,
    ) -> Result<Psram> {
        let block_elems = block_bytes / ELEMENT_WORD_BYTES as usize;
        if n_sets == 0 || blocks_per_set == 0 || block_elems == 0 || n_banks == 0 {
            return Err(Error::Config("psum store geometry fields must be positive".into()));
        }
        Ok(Psram {
            n_sets,
            blocks_per_set,
            block_elems,
            n_banks,
            sets: vec![vec![Block::free(); blocks_per_set]; n_sets],
            alloc_counter: 0,
            written_elems: 0,
            consumed_elems: 0,
            write_bytes: 0,
            read_bytes: 0,
        })
    }

    pub fn set_of(&self, row: usize) -> usize {
        row % self.n_sets
    }

    pub fn bank_of_block(&self, block_idx: usize) -> usize {
        block_idx % self.n_banks
    }

    pub fn block_elems(&self) -> usize {
        self.block_elems
    }

    /// Elements currently resident in valid blocks.
    pub fn resident_elems(&self) -> u64 {
        self.written_elems - self.consumed_elems
    }

    /// Appends `e` to the (row, k) psum fiber. Producers emit fibers in
    /// coordinate order, so `e.coord` must exceed the fiber's current last
    /// coordinate. Returns the block index written, or a capacity event
    /// when the set has no tagged block with space and no free block.
    pub fn partial_write(
        &mut self,
        row: usize,
        k: usize,
        e: Element,
    ) -> std::result::Result<usize, PsramCapacity> {
        let set_idx = self.set_of(row);
        let block_elems = self.block_elems;
        let newest = self.sets[set_idx]
            .iter_mut()
            .enumerate()
            .filter(|(_, b)| b.valid && b.row == row && b.k_tag == k)
            .max_by_key(|(_, b)| b.alloc_seq);
        if let Some((bi, block)) = newest {
            if let Some(last) = block.data.last() {
                // Producers emit in order; a violation is a scheduling bug
                // surfaced loudly rather than silently reordered.
                assert!(
                    e.coord > last.coord,
                    "psum fiber ({row},{k}) written out of order: {} after {}",
                    e.coord,
                    last.coord
                );
            }
            if block.last < block_elems {
                block.data.push(e);
                block.last += 1;
                self.written_elems += 1;
                self.write_bytes += ELEMENT_WORD_BYTES;
                return Ok(bi);
            }
        }
        let seq = self.alloc_counter;
        let set = &mut self.sets[set_idx];
        let Some((bi, free)) = set.iter_mut().enumerate().find(|(_, b)| !b.valid) else {
            return Err(PsramCapacity { set: set_idx });
        };
        self.alloc_counter = seq + 1;
        *free = Block {
            valid: true,
            row,
            k_tag: k,
            first: 0,
            last: 1,
            alloc_seq: seq,
            data: vec![e],
        };
        self.written_elems += 1;
        self.write_bytes += ELEMENT_WORD_BYTES;
        Ok(bi)
    }

    /// Reads and erases the next element of the (row, k) fiber, oldest
    /// block first. Returns the element and its block index, or `None`
    /// once the fiber is exhausted (a normal condition, not an error).
    pub fn consume(&mut self, row: usize, k: usize) -> Option<(Element, usize)> {
        let set_idx = self.set_of(row);
        let oldest = self.sets[set_idx]
            .iter_mut()
            .enumerate()
            .filter(|(_, b)| b.valid && b.row == row && b.k_tag == k)
            .min_by_key(|(_, b)| b.alloc_seq)?;
        let (bi, block) = oldest;
        let e = block.data[block.first];
        block.first += 1;
        if block.first == block.last {
            block.valid = false;
            block.data.clear();
        }
        self.consumed_elems += 1;
        self.read_bytes += ELEMENT_WORD_BYTES;
        Some((e, bi))
    }

    /// Distinct k tags holding psums for `row`, in allocation order of
    /// their oldest block. This is the order the merging controller scans.
    pub fn row_tags(&self, row: usize) -> Vec<usize> {
        let set_idx = self.set_of(row);
        let mut tagged: Vec<(u64, usize)> = Vec::new();
        for b in &self.sets[set_idx] {
            if b.valid && b.row == row {
                match tagged.iter_mut().find(|(_, k)| *k == b.k_tag) {
                    Some(entry) => entry.0 = entry.0.min(b.alloc_seq),
                    None => tagged.push((b.alloc_seq, b.k_tag)),
                }
            }
        }
        tagged.sort_unstable();
        tagged.into_iter().map(|(_, k)| k).collect()
    }

    /// Rows with valid blocks in `set`, ordered by resident element count
    /// (fullest first, then by row for determinism).
    pub fn rows_by_occupancy(&self, set: usize) -> Vec<(usize, usize)> {
        let mut per_row: Vec<(usize, usize)> = Vec::new();
        for b in &self.sets[set] {
            if b.valid {
                let n = b.last - b.first;
                match per_row.iter_mut().find(|(r, _)| *r == b.row) {
                    Some(entry) => entry.1 += n,
                    None => per_row.push((b.row, n)),
                }
            }
        }
        per_row.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        per_row
    }

    /// Number of free blocks in a set.
    pub fn free_blocks(&self, set: usize) -> usize {
        self.sets[set].iter().filter(|b| !b.valid).count()
    }

    pub fn blocks_per_set(&self) -> usize {
        self.blocks_per_set
    }

    pub fn n_sets(&self) -> usize {
        self.n_sets
    }
}
