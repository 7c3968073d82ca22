//! Seeded synthetic matrix generation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenseMatrix, ValueMode};
use crate::{Error, Result};

/// Default non-zero value range, inclusive.
pub const SPARSE_VALUE_MIN: i64 = 1;
pub const SPARSE_VALUE_MAX: i64 = 255;

/// Generates an `n_rows x n_cols` dense matrix where `sparsity` is the
/// fraction of zero entries. Deterministic for a fixed seed: the number of
/// zeros is exactly `round(sparsity * cells)` and the non-zero positions
/// are sampled uniformly without replacement. Values are uniform in
/// `[1, 255]`.
pub fn gen_sparse(n_rows: usize, n_cols: usize, sparsity: f64, seed: u64) -> Result<DenseMatrix> {
    gen_sparse_with(
        n_rows,
        n_cols,
        sparsity,
        seed,
        (SPARSE_VALUE_MIN, SPARSE_VALUE_MAX),
        ValueMode::Int,
    )
}

/// Full-control variant: explicit value range (0 is never produced) and
/// value mode. Real mode divides the sampled integer by 8 so values are
/// non-integral but still exactly representable.
pub fn gen_sparse_with(
    n_rows: usize,
    n_cols: usize,
    sparsity: f64,
    seed: u64,
    value_range: (i64, i64),
    mode: ValueMode,
) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Input(format!(
            "sparsity must be in [0,1], got {sparsity}"
        )));
    }
    let (lo, hi) = value_range;
    if lo > hi || (lo == 0 && hi == 0) {
        return Err(Error::Input(format!("bad value range [{lo},{hi}]")));
    }
    let mut out = DenseMatrix::zeros(n_rows, n_cols)?;
    let cells = n_rows * n_cols;
    let n_zero = (sparsity * cells as f64).round() as usize;
    let n_nonzero = cells - n_zero.min(cells);
    if n_nonzero == 0 {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates over the flat cell indices: the first
    // `n_nonzero` entries after shuffling are the non-zero positions.
    let mut cells_vec: Vec<usize> = (0..cells).collect();
    for i in 0..n_nonzero {
        let j = i + (rng.next_u32() as usize) % (cells - i);
        cells_vec.swap(i, j);
    }
    for &cell in &cells_vec[..n_nonzero] {
        let mut v = 0i64;
        while v == 0 {
            v = rng.gen_range(lo..=hi);
        }
        let value = match mode {
            ValueMode::Int => v as f64,
            ValueMode::Real => v as f64 / 8.0,
        };
        out.set(cell / n_cols, cell % n_cols, value);
    }
    Ok(out)
}
