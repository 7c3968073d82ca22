//! Stationary tile planning.
//!
//! A tile is one mapping of stationary elements onto the multipliers plus
//! the MRN cluster layout that goes with it. Inner product and Gustavson's
//! pack whole stationary fibers greedily in fiber order, one cluster per
//! fiber; a fiber longer than the multiplier count is split into chunks
//! whose partial results are combined downstream (in the output writer for
//! inner product, through the psum store for Gustavson's). Outer product
//! simply takes the next elements in compressed column order, one per
//! multiplier.

use crate::dataflow::Family;
use crate::sparse::CompressedMatrix;
use crate::{Error, Result};

/// One stationary element in core (M-stationary) coordinates: `row` is
/// the output row it contributes to, `k` the shared-dimension coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaElem {
    pub row: usize,
    pub k: usize,
    pub value: f64,
}

/// A contiguous group of leaves computing one output fiber (IP/Gust).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub row: usize,
    /// Index range into the tile's element list (= leaf range).
    pub elems: std::ops::Range<usize>,
    /// Chunk ordinal when the fiber is split across tiles.
    pub chunk: usize,
    pub is_last_chunk: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tile {
    pub elems: Vec<StaElem>,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone)]
pub struct TilePlan {
    pub family: Family,
    pub tiles: Vec<Tile>,
    /// Per output row, the index of the last tile that produces psums for
    /// it. Drives when a row may be merged and written out.
    pub last_tile_of_row: Vec<Option<usize>>,
}

/// Plans the stationary tiles for the core (M-stationary) execution of
/// `family` with the stationary matrix already in its required format:
/// CSR for IP/Gust (fibers are output rows), CSC for OP.
pub fn plan_tiles(sta: &CompressedMatrix, family: Family, n_mult: usize) -> Result<TilePlan> {
    if n_mult == 0 {
        return Err(Error::Config("multiplier count must be positive".into()));
    }
    let n_rows = match family {
        Family::Op => sta.minor_dim(),
        _ => sta.major_dim(),
    };
    let mut plan = TilePlan {
        family,
        tiles: Vec::new(),
        last_tile_of_row: vec![None; n_rows],
    };

    match family {
        Family::Op => {
            // CSC order: k-major. One element per leaf, n_mult per tile.
            let mut tile = Tile::default();
            for k in 0..sta.major_dim() {
                let (rows, vals) = sta.fiber_slices(k);
                for (&row, &v) in rows.iter().zip(vals) {
                    tile.elems.push(StaElem { row, k, value: v });
                    if tile.elems.len() == n_mult {
                        plan.tiles.push(std::mem::take(&mut tile));
                    }
                }
            }
            if !tile.elems.is_empty() {
                plan.tiles.push(tile);
            }
            for (ti, tile) in plan.tiles.iter().enumerate() {
                for e in &tile.elems {
                    plan.last_tile_of_row[e.row] = Some(ti);
                }
            }
        }
        Family::Ip | Family::Gust => {
            let mut tile = Tile::default();
            let mut chunks_of_row: Vec<usize> = vec![0; n_rows];
            for row in 0..sta.major_dim() {
                let (coords, vals) = sta.fiber_slices(row);
                if coords.is_empty() {
                    continue;
                }
                let mut remaining = coords.len();
                let mut offset = 0;
                while remaining > 0 {
                    let free = n_mult - tile.elems.len();
                    if remaining > free && !tile.elems.is_empty() {
                        // The fiber (or its next chunk) does not fit in
                        // what is left of this tile.
                        plan.tiles.push(std::mem::take(&mut tile));
                        continue;
                    }
                    let take = remaining.min(free);
                    let start = tile.elems.len();
                    for i in 0..take {
                        tile.elems.push(StaElem {
                            row,
                            k: coords[offset + i],
                            value: vals[offset + i],
                        });
                    }
                    tile.clusters.push(Cluster {
                        row,
                        elems: start..start + take,
                        chunk: chunks_of_row[row],
                        is_last_chunk: remaining == take,
                    });
                    chunks_of_row[row] += 1;
                    offset += take;
                    remaining -= take;
                }
            }
            if !tile.elems.is_empty() {
                plan.tiles.push(tile);
            }
            for (ti, tile) in plan.tiles.iter().enumerate() {
                for c in &tile.clusters {
                    plan.last_tile_of_row[c.row] = Some(ti);
                }
            }
        }
    }
    Ok(plan)
}

impl TilePlan {
    pub fn stationary_nnz(&self) -> usize {
        self.tiles.iter().map(|t| t.elems.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{compress, DenseMatrix, MajorAxis};

    fn walkthrough_a() -> DenseMatrix {
        DenseMatrix::from_rows(&[&[0.0, 2.0, 0.0, 0.0], &[3.0, 0.0, 4.0, 5.0]]).unwrap()
    }

    #[test]
    fn op_walkthrough_single_tile_in_csc_order() {
        let a = compress(&walkthrough_a(), MajorAxis::Col);
        let plan = plan_tiles(&a, Family::Op, 4).unwrap();
        assert_eq!(plan.tiles.len(), 1);
        let got: Vec<(usize, usize)> = plan.tiles[0].elems.iter().map(|e| (e.row, e.k)).collect();
        // A(1,0), A(0,1), A(1,2), A(1,3) in compressed column order.
        assert_eq!(got, vec![(1, 0), (0, 1), (1, 2), (1, 3)]);
        assert_eq!(plan.last_tile_of_row, vec![Some(0), Some(0)]);
    }

    #[test]
    fn gust_walkthrough_clusters_one_and_three() {
        let a = compress(&walkthrough_a(), MajorAxis::Row);
        let plan = plan_tiles(&a, Family::Gust, 4).unwrap();
        assert_eq!(plan.tiles.len(), 1);
        let sizes: Vec<usize> = plan.tiles[0].clusters.iter().map(|c| c.elems.len()).collect();
        let rows: Vec<usize> = plan.tiles[0].clusters.iter().map(|c| c.row).collect();
        assert_eq!(sizes, vec![1, 3]);
        assert_eq!(rows, vec![0, 1]);
    }

    #[test]
    fn ip_long_fiber_splits_into_two_tiles() {
        let mut d = DenseMatrix::zeros(1, 100).unwrap();
        for j in 0..100 {
            d.set(0, j, 1.0);
        }
        let a = compress(&d, MajorAxis::Row);
        let plan = plan_tiles(&a, Family::Ip, 64).unwrap();
        assert_eq!(plan.tiles.len(), 2);
        assert_eq!(plan.tiles[0].elems.len(), 64);
        assert_eq!(plan.tiles[1].elems.len(), 36);
        assert_eq!(plan.tiles[0].clusters[0].chunk, 0);
        assert!(!plan.tiles[0].clusters[0].is_last_chunk);
        assert!(plan.tiles[1].clusters[0].is_last_chunk);
    }

    #[test]
    fn empty_stationary_matrix_plans_no_tiles() {
        let a = compress(&DenseMatrix::zeros(3, 3).unwrap(), MajorAxis::Row);
        let plan = plan_tiles(&a, Family::Gust, 4).unwrap();
        assert!(plan.tiles.is_empty());
        assert_eq!(plan.stationary_nnz(), 0);
    }

    #[test]
    fn tiles_cover_every_element_exactly_once() {
        for family in [Family::Ip, Family::Op, Family::Gust] {
            let major = if matches!(family, Family::Op) { MajorAxis::Col } else { MajorAxis::Row };
            for seed in 0..10 {
                let d = crate::sparse::gen_sparse(9, 11, 0.4, seed).unwrap();
                let a = compress(&d, major);
                let plan = plan_tiles(&a, family, 8).unwrap();
                assert_eq!(plan.stationary_nnz(), a.nnz(), "family {family:?}");
                assert!(plan.tiles.iter().all(|t| t.elems.len() <= 8));
            }
        }
    }

    #[test]
    fn whole_fibers_share_a_tile_when_they_fit() {
        // Rows of 3 and 4 elements pack into one 8-leaf tile; the next row
        // of 5 no longer fits and opens a new tile.
        let d = DenseMatrix::from_rows(&[
            &[1.0, 1.0, 1.0, 0.0, 0.0],
            &[1.0, 1.0, 1.0, 1.0, 0.0],
            &[1.0, 1.0, 1.0, 1.0, 1.0],
        ])
        .unwrap();
        let a = compress(&d, MajorAxis::Row);
        let plan = plan_tiles(&a, Family::Gust, 8).unwrap();
        assert_eq!(plan.tiles.len(), 2);
        assert_eq!(plan.tiles[0].clusters.len(), 2);
        assert_eq!(plan.tiles[1].clusters.len(), 1);
    }
}
