//! Matrix file formats.
//!
//! Two text formats are supported, both ways:
//!
//! * Matrix Market coordinate format: header
//!   `%%MatrixMarket matrix coordinate integer general` (or `real`),
//!   a `rows cols nnz` line, then 1-based `i j v` triples.
//! * Raw dense text: a `rows cols` line followed by row-major values.
//!
//! Parsers are strict, never panic on malformed input and never allocate
//! proportionally to dimensions claimed by an untrusted header before the
//! corresponding data has actually been seen.

use std::fmt::Write as _;

use super::{compress, CompressedMatrix, DenseMatrix, MajorAxis, ValueMode};
use crate::{Error, Result};

fn input_err(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

/// Iterates whitespace-separated tokens, skipping `%` comment lines
/// (after the header line, which the caller consumes itself).
fn data_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('%'))
        .flat_map(|l| l.split_whitespace())
}

fn parse_dim(tok: Option<&str>, what: &str) -> Result<usize> {
    let t = tok.ok_or_else(|| input_err(format!("missing {what}")))?;
    let v: usize = t
        .parse()
        .map_err(|_| input_err(format!("bad {what}: {t:?}")))?;
    if v == 0 {
        return Err(input_err(format!("{what} must be positive")));
    }
    Ok(v)
}

/// Parses Matrix Market coordinate text into a CSR matrix plus the value
/// mode declared by the header. Duplicate coordinates are rejected.
pub fn parse_matrix_market(text: &str) -> Result<(CompressedMatrix, ValueMode)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| input_err("empty matrix market file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("%%MatrixMarket") {
        return Err(input_err("header must start with %%MatrixMarket"));
    }
    if fields.next() != Some("matrix") || fields.next() != Some("coordinate") {
        return Err(input_err("only `matrix coordinate` files are supported"));
    }
    let mode = match fields.next() {
        Some("integer") => ValueMode::Int,
        Some("real") => ValueMode::Real,
        other => {
            return Err(input_err(format!(
                "unsupported value type {other:?} (expected integer or real)"
            )))
        }
    };
    if fields.next() != Some("general") {
        return Err(input_err("only `general` symmetry is supported"));
    }

    let rest = text.split_once('\n').map_or("", |(_, r)| r);
    let mut toks = data_tokens(rest);
    let n_rows = parse_dim(toks.next(), "row count")?;
    let n_cols = parse_dim(toks.next(), "column count")?;
    let nnz_tok = toks.next().ok_or_else(|| input_err("missing nnz count"))?;
    let nnz: usize = nnz_tok
        .parse()
        .map_err(|_| input_err(format!("bad nnz count: {nnz_tok:?}")))?;

    let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz.min(1 << 20));
    for _ in 0..nnz {
        let i = parse_dim(toks.next(), "row index")?;
        let j = parse_dim(toks.next(), "column index")?;
        let vt = toks.next().ok_or_else(|| input_err("missing value"))?;
        let v: f64 = match mode {
            ValueMode::Int => vt
                .parse::<i64>()
                .map_err(|_| input_err(format!("bad integer value: {vt:?}")))?
                as f64,
            ValueMode::Real => {
                let v: f64 = vt
                    .parse()
                    .map_err(|_| input_err(format!("bad real value: {vt:?}")))?;
                if !v.is_finite() {
                    return Err(input_err(format!("non-finite value: {vt:?}")));
                }
                v
            }
        };
        if i > n_rows || j > n_cols {
            return Err(input_err(format!(
                "entry ({i},{j}) out of bounds for {n_rows}x{n_cols}"
            )));
        }
        if v != 0.0 {
            triples.push((i - 1, j - 1, v));
        }
    }
    if toks.next().is_some() {
        return Err(input_err("trailing data after declared entries"));
    }

    triples.sort_by_key(|t| (t.0, t.1));
    if triples.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(input_err("duplicate coordinate in matrix market file"));
    }

    let mut ptr = vec![0usize; n_rows + 1];
    let mut idx = Vec::with_capacity(triples.len());
    let mut val = Vec::with_capacity(triples.len());
    for &(r, c, v) in &triples {
        ptr[r + 1] += 1;
        idx.push(c);
        val.push(v);
    }
    for r in 1..=n_rows {
        ptr[r] += ptr[r - 1];
    }
    let m = CompressedMatrix::from_parts(MajorAxis::Row, n_rows, n_cols, ptr, idx, val)?;
    Ok((m, mode))
}

/// Writes a matrix in Matrix Market coordinate format. Entries are emitted
/// in the matrix's own fiber order.
pub fn write_matrix_market(m: &CompressedMatrix, mode: ValueMode) -> String {
    let ty = match mode {
        ValueMode::Int => "integer",
        ValueMode::Real => "real",
    };
    let mut out = String::new();
    let _ = writeln!(out, "%%MatrixMarket matrix coordinate {ty} general");
    let _ = writeln!(out, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz());
    for f in 0..m.major_dim() {
        let (coords, vals) = m.fiber_slices(f);
        for (&c, &v) in coords.iter().zip(vals) {
            let (i, j) = match m.major() {
                MajorAxis::Row => (f, c),
                MajorAxis::Col => (c, f),
            };
            match mode {
                ValueMode::Int => {
                    let _ = writeln!(out, "{} {} {}", i + 1, j + 1, v as i64);
                }
                ValueMode::Real => {
                    let _ = writeln!(out, "{} {} {}", i + 1, j + 1, v);
                }
            }
        }
    }
    out
}

/// Parses the raw dense text format: `rows cols` then row-major values.
pub fn parse_dense_text(text: &str) -> Result<DenseMatrix> {
    let mut toks = data_tokens(text);
    let n_rows = parse_dim(toks.next(), "row count")?;
    let n_cols = parse_dim(toks.next(), "column count")?;
    let cells = n_rows
        .checked_mul(n_cols)
        .filter(|&c| c <= 1 << 26)
        .ok_or_else(|| input_err(format!("dense matrix {n_rows}x{n_cols} is too large")))?;
    let mut values = Vec::with_capacity(cells.min(1 << 20));
    for tok in toks.by_ref().take(cells) {
        let v: f64 = tok
            .parse()
            .map_err(|_| input_err(format!("bad value: {tok:?}")))?;
        if !v.is_finite() {
            return Err(input_err(format!("non-finite value: {tok:?}")));
        }
        values.push(v);
    }
    if values.len() != cells {
        return Err(input_err(format!(
            "expected {cells} values, found {}",
            values.len()
        )));
    }
    if toks.next().is_some() {
        return Err(input_err("trailing data after matrix values"));
    }
    let mut m = DenseMatrix::zeros(n_rows, n_cols)?;
    for (cell, v) in values.into_iter().enumerate() {
        m.set(cell / n_cols, cell % n_cols, v);
    }
    Ok(m)
}

/// Writes the raw dense text format.
pub fn write_dense_text(m: &DenseMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.n_rows(), m.n_cols());
    for i in 0..m.n_rows() {
        let row: Vec<String> = (0..m.n_cols()).map(|j| format!("{}", m.get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Loads either supported format, sniffing on the Matrix Market header.
/// Returns a CSR matrix plus the declared (or assumed integer) value mode.
pub fn load_matrix_str(text: &str) -> Result<(CompressedMatrix, ValueMode)> {
    if text.trim_start().starts_with("%%MatrixMarket") {
        parse_matrix_market(text)
    } else {
        let dense = parse_dense_text(text)?;
        let mode = if dense_is_integral(&dense) {
            ValueMode::Int
        } else {
            ValueMode::Real
        };
        Ok((compress(&dense, MajorAxis::Row), mode))
    }
}

fn dense_is_integral(m: &DenseMatrix) -> bool {
    for i in 0..m.n_rows() {
        for j in 0..m.n_cols() {
            if m.get(i, j).fract() != 0.0 {
                return false;
            }
        }
    }
    true
}
