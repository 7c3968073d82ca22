//! Compressed sparse matrices (CSR/CSC as one parametric format), dense
//! oracles, fiber access, synthetic generation and size accounting.
//!
//! CSR and CSC share one layout: a pointer vector over the major axis, a
//! minor-coordinate vector and a value vector. A *fiber* is one compressed
//! row (CSR) or column (CSC): a coordinate-sorted list of (coord, value)
//! elements.

mod gen;
mod io;

pub use gen::{gen_sparse, gen_sparse_with, SPARSE_VALUE_MAX, SPARSE_VALUE_MIN};
pub use io::{
    load_matrix_str, parse_dense_text, parse_matrix_market, write_dense_text, write_matrix_market,
};

use crate::{Error, Result};

/// Bytes charged per (coordinate, value) element in all traffic accounting.
/// The element is treated as one opaque 32-bit word.
pub const ELEMENT_WORD_BYTES: u64 = 4;
/// Bytes charged per pointer-vector entry in size accounting.
pub const POINTER_WORD_BYTES: u64 = 4;

/// How values are generated and compared. Storage is `f64` either way;
/// integer mode keeps every value integral so comparisons are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueMode {
    #[default]
    Int,
    Real,
}

/// Relative tolerance used when comparing real-mode values.
pub const REAL_REL_TOL: f64 = 1e-6;

/// Major axis of a compressed matrix: `Row` is CSR, `Col` is CSC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum MajorAxis {
    Row,
    Col,
}

impl MajorAxis {
    pub fn flipped(self) -> MajorAxis {
        match self {
            MajorAxis::Row => MajorAxis::Col,
            MajorAxis::Col => MajorAxis::Row,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MajorAxis::Row => "csr",
            MajorAxis::Col => "csc",
        }
    }
}

/// One (coordinate, value) duple inside a fiber. `coord` is the minor-axis
/// coordinate of the non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub coord: usize,
    pub value: f64,
}

impl Element {
    pub fn new(coord: usize, value: f64) -> Element {
        Element { coord, value }
    }
}

/// One compressed row or column: elements strictly sorted by coordinate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fiber {
    pub elements: Vec<Element>,
}

impl Fiber {
    pub fn new(elements: Vec<Element>) -> Fiber {
        Fiber { elements }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// True when the elements are strictly sorted by coordinate.
    pub fn is_sorted(&self) -> bool {
        self.elements.windows(2).all(|w| w[0].coord < w[1].coord)
    }
}

/// Dense row-major matrix. Used as the oracle substrate and as the
/// interchange type for the raw dense text format.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Result<DenseMatrix> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Input(format!(
                "dense matrix dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        let cells = n_rows
            .checked_mul(n_cols)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| {
                Error::Input(format!("dense matrix {n_rows}x{n_cols} is too large"))
            })?;
        Ok(DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; cells],
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<DenseMatrix> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut m = DenseMatrix::zeros(n_rows, n_cols)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Input("ragged dense rows".into()));
            }
            m.data[i * n_cols..(i + 1) * n_cols].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Plain triple-loop product. This is the reference path the simulated
    /// accelerator is checked against; it never touches compressed code.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != rhs.n_rows {
            return Err(Error::Input(format!(
                "dimension mismatch: {}x{} times {}x{}",
                self.n_rows, self.n_cols, rhs.n_rows, rhs.n_cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.n_rows, rhs.n_cols)?;
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.n_cols {
                    let b = rhs.get(k, j);
                    if b != 0.0 {
                        out.data[i * rhs.n_cols + j] += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn transposed(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n_cols, self.n_rows).expect("dims already validated");
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Element-wise equality under a value mode: exact for `Int`, relative
    /// tolerance for `Real`.
    pub fn approx_eq(&self, other: &DenseMatrix, mode: ValueMode) -> bool {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return false;
        }
        self.data.iter().zip(&other.data).all(|(x, y)| match mode {
            ValueMode::Int => x == y,
            ValueMode::Real => {
                let scale = x.abs().max(y.abs()).max(1.0);
                (x - y).abs() <= REAL_REL_TOL * scale
            }
        })
    }
}

/// CSR/CSC matrix as pointer/index/value vectors plus a major-axis tag.
///
/// Invariants: `ptr[0] == 0`, `ptr` non-decreasing, `ptr[last] == nnz`,
/// and within each fiber the coordinates are strictly increasing. A stored
/// zero value is legal: merging hardware does not re-examine accumulated
/// values, so a sum that cancels to zero stays in the output.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMatrix {
    major: MajorAxis,
    n_rows: usize,
    n_cols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl CompressedMatrix {
    /// Builds a matrix from raw vectors, validating every invariant.
    pub fn from_parts(
        major: MajorAxis,
        n_rows: usize,
        n_cols: usize,
        ptr: Vec<usize>,
        idx: Vec<usize>,
        val: Vec<f64>,
    ) -> Result<CompressedMatrix> {
        let m = CompressedMatrix {
            major,
            n_rows,
            n_cols,
            ptr,
            idx,
            val,
        };
        m.validate()?;
        Ok(m)
    }

    /// An all-empty matrix of the given shape.
    pub fn empty(major: MajorAxis, n_rows: usize, n_cols: usize) -> Result<CompressedMatrix> {
        let major_dim = match major {
            MajorAxis::Row => n_rows,
            MajorAxis::Col => n_cols,
        };
        CompressedMatrix::from_parts(major, n_rows, n_cols, vec![0; major_dim + 1], vec![], vec![])
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Input(format!("malformed compressed matrix: {msg}")));
        if self.n_rows == 0 || self.n_cols == 0 {
            return fail(format!(
                "dimensions must be positive, got {}x{}",
                self.n_rows, self.n_cols
            ));
        }
        if self.ptr.len() != self.major_dim() + 1 {
            return fail(format!(
                "ptr length {} does not match major dimension {}",
                self.ptr.len(),
                self.major_dim()
            ));
        }
        if self.ptr[0] != 0 {
            return fail("ptr[0] must be 0".into());
        }
        if self.ptr.windows(2).any(|w| w[0] > w[1]) {
            return fail("ptr must be non-decreasing".into());
        }
        if *self.ptr.last().unwrap() != self.idx.len() || self.idx.len() != self.val.len() {
            return fail(format!(
                "ptr[last]={} idx={} val={} must all agree",
                self.ptr.last().unwrap(),
                self.idx.len(),
                self.val.len()
            ));
        }
        let minor = self.minor_dim();
        for f in 0..self.major_dim() {
            let s = &self.idx[self.ptr[f]..self.ptr[f + 1]];
            if s.iter().any(|&c| c >= minor) {
                return fail(format!("coordinate out of range in fiber {f}"));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("fiber {f} coordinates not strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn major(&self) -> MajorAxis {
        self.major
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn major_dim(&self) -> usize {
        match self.major {
            MajorAxis::Row => self.n_rows,
            MajorAxis::Col => self.n_cols,
        }
    }

    pub fn minor_dim(&self) -> usize {
        match self.major {
            MajorAxis::Row => self.n_cols,
            MajorAxis::Col => self.n_rows,
        }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn ptr(&self) -> &[usize] {
        &self.ptr
    }

    pub fn idx(&self) -> &[usize] {
        &self.idx
    }

    pub fn val(&self) -> &[f64] {
        &self.val
    }

    /// Borrowed view of fiber `i` as parallel coordinate/value slices.
    pub fn fiber_slices(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.ptr[i], self.ptr[i + 1]);
        (&self.idx[s..e], &self.val[s..e])
    }

    /// Accounting size in bytes: one word per element plus one word per
    /// pointer entry.
    pub fn compressed_size_bytes(&self) -> u64 {
        self.idx.len() as u64 * ELEMENT_WORD_BYTES + self.ptr.len() as u64 * POINTER_WORD_BYTES
    }

    /// Reinterprets the vectors as the transposed matrix with the opposite
    /// major axis. No data moves: the CSC form of `M` is bit-identical to
    /// the CSR form of `M` transposed.
    pub fn transpose_reinterpret(&self) -> CompressedMatrix {
        CompressedMatrix {
            major: self.major.flipped(),
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            ptr: self.ptr.clone(),
            idx: self.idx.clone(),
            val: self.val.clone(),
        }
    }
}

/// Compresses a dense matrix, dropping explicit zeros.
pub fn compress(dense: &DenseMatrix, major: MajorAxis) -> CompressedMatrix {
    let (major_dim, minor_dim) = match major {
        MajorAxis::Row => (dense.n_rows(), dense.n_cols()),
        MajorAxis::Col => (dense.n_cols(), dense.n_rows()),
    };
    let mut ptr = Vec::with_capacity(major_dim + 1);
    let mut idx = Vec::new();
    let mut val = Vec::new();
    ptr.push(0);
    for f in 0..major_dim {
        for c in 0..minor_dim {
            let v = match major {
                MajorAxis::Row => dense.get(f, c),
                MajorAxis::Col => dense.get(c, f),
            };
            if v != 0.0 {
                idx.push(c);
                val.push(v);
            }
        }
        ptr.push(idx.len());
    }
    CompressedMatrix {
        major,
        n_rows: dense.n_rows(),
        n_cols: dense.n_cols(),
        ptr,
        idx,
        val,
    }
}

/// Expands a compressed matrix back to dense form.
pub fn decompress(m: &CompressedMatrix) -> Result<DenseMatrix> {
    m.validate()
        .map_err(|e| Error::Input(format!("decompress: {e}")))?;
    let mut dense = DenseMatrix::zeros(m.n_rows, m.n_cols)?;
    for f in 0..m.major_dim() {
        let (coords, vals) = m.fiber_slices(f);
        for (&c, &v) in coords.iter().zip(vals) {
            match m.major {
                MajorAxis::Row => dense.set(f, c, v),
                MajorAxis::Col => dense.set(c, f, v),
            }
        }
    }
    Ok(dense)
}

/// Converts a matrix to the target major axis. Identity when the target
/// matches; otherwise a stable counting transpose of the element list.
pub fn convert(m: &CompressedMatrix, target: MajorAxis) -> CompressedMatrix {
    if m.major == target {
        return m.clone();
    }
    let new_major_dim = m.minor_dim();
    let mut counts = vec![0usize; new_major_dim + 1];
    for &c in &m.idx {
        counts[c + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let ptr = counts.clone();
    let mut cursor = counts;
    let mut idx = vec![0usize; m.idx.len()];
    let mut val = vec![0f64; m.val.len()];
    for f in 0..m.major_dim() {
        let (coords, vals) = m.fiber_slices(f);
        for (&c, &v) in coords.iter().zip(vals) {
            let pos = cursor[c];
            cursor[c] += 1;
            idx[pos] = f;
            val[pos] = v;
        }
    }
    CompressedMatrix {
        major: target,
        n_rows: m.n_rows,
        n_cols: m.n_cols,
        ptr,
        idx,
        val,
    }
}

/// Returns fiber `i` of the matrix, possibly empty.
pub fn fiber_at(m: &CompressedMatrix, i: usize) -> Result<Fiber> {
    if i >= m.major_dim() {
        return Err(Error::Input(format!(
            "fiber index {i} out of range for major dimension {}",
            m.major_dim()
        )));
    }
    let (coords, vals) = m.fiber_slices(i);
    Ok(Fiber::new(
        coords
            .iter()
            .zip(vals)
            .map(|(&c, &v)| Element::new(c, v))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> DenseMatrix {
        DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()
    }

    /// The 2x4 walk-through pattern: non-zeros at (0,1), (1,0), (1,2), (1,3).
    pub(crate) fn walkthrough_a() -> DenseMatrix {
        DenseMatrix::from_rows(&[&[0.0, 2.0, 0.0, 0.0], &[3.0, 0.0, 4.0, 5.0]]).unwrap()
    }

    #[test]
    fn compress_identity_csr() {
        let m = compress(&identity2(), MajorAxis::Row);
        assert_eq!(m.ptr(), &[0, 1, 2]);
        assert_eq!(m.idx(), &[0, 1]);
        assert_eq!(m.val(), &[1.0, 1.0]);
    }

    #[test]
    fn compress_walkthrough_csc_single_element_columns() {
        let m = compress(&walkthrough_a(), MajorAxis::Col);
        assert_eq!(m.major_dim(), 4);
        let rows: Vec<Vec<usize>> = (0..4).map(|c| m.fiber_slices(c).0.to_vec()).collect();
        assert_eq!(rows, vec![vec![1], vec![0], vec![1], vec![1]]);
    }

    #[test]
    fn compress_all_zero() {
        let z = DenseMatrix::zeros(3, 3).unwrap();
        for major in [MajorAxis::Row, MajorAxis::Col] {
            let m = compress(&z, major);
            assert_eq!(m.ptr(), &[0, 0, 0, 0]);
            assert!(m.idx().is_empty());
            assert!(m.val().is_empty());
        }
    }

    #[test]
    fn decompress_round_trip_identity() {
        let d = identity2();
        let back = decompress(&compress(&d, MajorAxis::Row)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn decompress_empty_fiber_row() {
        let m =
            CompressedMatrix::from_parts(MajorAxis::Row, 1, 5, vec![0, 0], vec![], vec![]).unwrap();
        let d = decompress(&m).unwrap();
        assert_eq!((d.n_rows(), d.n_cols()), (1, 5));
        assert_eq!(d.nnz(), 0);
    }

    #[test]
    fn decompress_walkthrough_csc() {
        let m = compress(&walkthrough_a(), MajorAxis::Col);
        let d = decompress(&m).unwrap();
        assert_eq!(d.nnz(), 4);
        for (i, j) in [(0, 1), (1, 0), (1, 2), (1, 3)] {
            assert_ne!(d.get(i, j), 0.0);
        }
    }

    #[test]
    fn decompress_rejects_malformed() {
        let bad = CompressedMatrix {
            major: MajorAxis::Row,
            n_rows: 2,
            n_cols: 2,
            ptr: vec![0, 2, 1],
            idx: vec![0],
            val: vec![1.0],
        };
        assert!(decompress(&bad).is_err());
    }

    #[test]
    fn convert_identity_is_symmetric() {
        let csr = compress(&identity2(), MajorAxis::Row);
        let csc = convert(&csr, MajorAxis::Col);
        assert_eq!(csc.ptr(), csr.ptr());
        assert_eq!(csc.idx(), csr.idx());
        assert_eq!(csc.val(), csr.val());
    }

    /// Brute-force transpose oracle: re-derive the CSC form from the raw
    /// coordinate list, independently of `convert`.
    fn transpose_oracle(m: &CompressedMatrix) -> Vec<(usize, usize, f64)> {
        let mut triples = Vec::new();
        for f in 0..m.major_dim() {
            let (coords, vals) = m.fiber_slices(f);
            for (&c, &v) in coords.iter().zip(vals) {
                let (r, cc) = match m.major() {
                    MajorAxis::Row => (f, c),
                    MajorAxis::Col => (c, f),
                };
                triples.push((cc, r, v)); // sort by column, then row
            }
        }
        triples.sort_by_key(|t| (t.0, t.1));
        triples
    }

    #[test]
    fn convert_walkthrough_matches_transpose_oracle() {
        let csr = compress(&walkthrough_a(), MajorAxis::Row);
        let csc = convert(&csr, MajorAxis::Col);
        let mut got = Vec::new();
        for c in 0..csc.major_dim() {
            let (coords, vals) = csc.fiber_slices(c);
            for (&r, &v) in coords.iter().zip(vals) {
                got.push((c, r, v));
            }
        }
        assert_eq!(got, transpose_oracle(&csr));
        let rows: Vec<Vec<usize>> = (0..4).map(|c| csc.fiber_slices(c).0.to_vec()).collect();
        assert_eq!(rows, vec![vec![1], vec![0], vec![1], vec![1]]);
    }

    #[test]
    fn convert_involution_on_random_matrices() {
        for seed in 0..20 {
            let d = gen_sparse(5, 7, 0.6, seed).unwrap();
            let m = compress(&d, MajorAxis::Row);
            let back = convert(&convert(&m, MajorAxis::Col), MajorAxis::Row);
            assert_eq!(back, m, "seed {seed}");
        }
    }

    #[test]
    fn conversion_preserves_content() {
        for seed in 0..10 {
            let d = gen_sparse(6, 4, 0.5, seed).unwrap();
            let m = compress(&d, MajorAxis::Col);
            assert_eq!(
                decompress(&convert(&m, MajorAxis::Row)).unwrap(),
                decompress(&m).unwrap()
            );
        }
    }

    #[test]
    fn fiber_at_cases() {
        let id = compress(&identity2(), MajorAxis::Row);
        assert_eq!(fiber_at(&id, 1).unwrap().elements, vec![Element::new(1, 1.0)]);

        let a = compress(&walkthrough_a(), MajorAxis::Row);
        let f = fiber_at(&a, 1).unwrap();
        assert_eq!(
            f.elements.iter().map(|e| e.coord).collect::<Vec<_>>(),
            vec![0, 2, 3]
        );

        let z = compress(&DenseMatrix::zeros(2, 2).unwrap(), MajorAxis::Row);
        assert!(fiber_at(&z, 0).unwrap().is_empty());
        assert!(fiber_at(&z, 2).is_err());
    }

    #[test]
    fn fiber_concatenation_reproduces_vectors() {
        for seed in 0..5 {
            let d = gen_sparse(8, 9, 0.4, seed).unwrap();
            let m = compress(&d, MajorAxis::Col);
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for f in 0..m.major_dim() {
                for e in fiber_at(&m, f).unwrap().elements {
                    idx.push(e.coord);
                    val.push(e.value);
                }
            }
            assert_eq!(idx, m.idx());
            assert_eq!(val, m.val());
        }
    }

    #[test]
    fn round_trip_all_majors_random() {
        for seed in 0..20 {
            let d = gen_sparse(7, 5, 0.7, seed).unwrap();
            for major in [MajorAxis::Row, MajorAxis::Col] {
                assert_eq!(decompress(&compress(&d, major)).unwrap(), d);
            }
        }
    }

    #[test]
    fn nnz_matches_dense_count() {
        for seed in 0..10 {
            let d = gen_sparse(6, 6, 0.3, seed).unwrap();
            assert_eq!(compress(&d, MajorAxis::Row).nnz(), d.nnz());
        }
    }

    #[test]
    fn transpose_reinterpret_is_transpose() {
        let d = gen_sparse(4, 6, 0.5, 3).unwrap();
        let m = compress(&d, MajorAxis::Col);
        let t = m.transpose_reinterpret();
        assert_eq!(t.major(), MajorAxis::Row);
        assert_eq!((t.n_rows(), t.n_cols()), (6, 4));
        assert_eq!(decompress(&t).unwrap(), d.transposed());
    }

    #[test]
    fn size_accounting() {
        let m = compress(&walkthrough_a(), MajorAxis::Row);
        // 4 elements + 3 pointer entries, 4 bytes each.
        assert_eq!(m.compressed_size_bytes(), 4 * 4 + 3 * 4);
    }
}
