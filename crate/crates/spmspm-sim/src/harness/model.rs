//! Model and sweep-grid file formats.
//!
//! A model file lists layers in execution order, one per line:
//!
//! ```text
//! policy = allow-ec            # or forbid-ec (optional, default allow-ec)
//! file a=path/to/a.mtx b=path/to/b.mtx
//! synth M=64 N=128 K=32 spA=0.7 spB=0.5 seed=11
//! ```
//!
//! Layer 1 uses its declared A operand; later layers receive the previous
//! layer's output as their activation, so only their B (weight) side is
//! taken from the descriptor and declared dimensions must compose.
//!
//! A grid file gives value lists per axis; the sweep runs the cross
//! product in listing order (M outermost, spB innermost):
//!
//! ```text
//! M = 32,64
//! N = 64
//! K = 16,48
//! spA = 0.5,0.9
//! spB = 0.3
//! seed = 7
//! ```
//!
//! Alternatively `shapes = MxNxK, MxNxK, ...` pins whole (M, N, K)
//! tuples and crosses them with the sparsity axes only, which keeps
//! layer-like aspect ratios intact across the sweep.

use crate::{Error, Result};

/// EC handling along a layer chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransitionPolicy {
    /// Conversions are simulated and charged when chosen.
    #[default]
    AllowEc,
    /// Only conversion-free transitions are legal.
    ForbidEc,
}

/// One layer's operand sources.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSource {
    Files { a: String, b: String },
    Synth { m: usize, n: usize, k: usize, sp_a: f64, sp_b: f64, seed: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct ModelSpec {
    pub layers: Vec<LayerSource>,
    pub policy: TransitionPolicy,
}

fn kv_fields<'a>(rest: &'a str, line: usize) -> Result<Vec<(&'a str, &'a str)>> {
    rest.split_whitespace()
        .map(|tok| {
            tok.split_once('=').ok_or_else(|| {
                Error::Input(format!("line {line}: expected key=value, got {tok:?}"))
            })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Input(format!("line {line}: bad value for {key}: {v:?}")))
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<ModelSpec> {
        let mut spec = ModelSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(policy) = line.strip_prefix("policy") {
                let v = policy.trim_start().strip_prefix('=').map(str::trim);
                spec.policy = match v {
                    Some("allow-ec") => TransitionPolicy::AllowEc,
                    Some("forbid-ec") => TransitionPolicy::ForbidEc,
                    _ => {
                        return Err(Error::Input(format!(
                            "line {line_no}: policy must be allow-ec or forbid-ec"
                        )))
                    }
                };
                continue;
            }
            if let Some(rest) = line.strip_prefix("file ") {
                let mut a = None;
                let mut b = None;
                for (k, v) in kv_fields(rest, line_no)? {
                    match k {
                        "a" => a = Some(v.to_string()),
                        "b" => b = Some(v.to_string()),
                        other => {
                            return Err(Error::Input(format!(
                                "line {line_no}: unknown file field {other:?}"
                            )))
                        }
                    }
                }
                let (Some(a), Some(b)) = (a, b) else {
                    return Err(Error::Input(format!(
                        "line {line_no}: file layer needs a= and b="
                    )));
                };
                spec.layers.push(LayerSource::Files { a, b });
                continue;
            }
            if let Some(rest) = line.strip_prefix("synth ") {
                let (mut m, mut n, mut k) = (None, None, None);
                let (mut sp_a, mut sp_b, mut seed) = (None, None, 0u64);
                for (key, v) in kv_fields(rest, line_no)? {
                    match key {
                        "M" => m = Some(parse_num(v, key, line_no)?),
                        "N" => n = Some(parse_num(v, key, line_no)?),
                        "K" => k = Some(parse_num(v, key, line_no)?),
                        "spA" => sp_a = Some(parse_num(v, key, line_no)?),
                        "spB" => sp_b = Some(parse_num(v, key, line_no)?),
                        "seed" => seed = parse_num(v, key, line_no)?,
                        other => {
                            return Err(Error::Input(format!(
                                "line {line_no}: unknown synth field {other:?}"
                            )))
                        }
                    }
                }
                let (Some(m), Some(n), Some(k), Some(sp_a), Some(sp_b)) = (m, n, k, sp_a, sp_b)
                else {
                    return Err(Error::Input(format!(
                        "line {line_no}: synth layer needs M, N, K, spA, spB"
                    )));
                };
                spec.layers.push(LayerSource::Synth { m, n, k, sp_a, sp_b, seed });
                continue;
            }
            return Err(Error::Input(format!(
                "line {line_no}: expected `file ...`, `synth ...` or `policy = ...`"
            )));
        }
        if spec.layers.is_empty() {
            return Err(Error::Input("model file declares no layers".into()));
        }
        Ok(spec)
    }
}

/// Sweep grid: the cross product of these axes. When `shapes` is
/// non-empty it replaces the individual M/N/K axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub shapes: Vec<(usize, usize, usize)>,
    pub sp_a: Vec<f64>,
    pub sp_b: Vec<f64>,
    pub seed: u64,
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub sp_a: f64,
    pub sp_b: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<GridSpec> {
        let mut m = Vec::new();
        let mut n = Vec::new();
        let mut k = Vec::new();
        let mut shapes = Vec::new();
        let mut sp_a = Vec::new();
        let mut sp_b = Vec::new();
        let mut seed = 0u64;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Input(format!(
                    "line {line_no}: expected key = v1,v2,..."
                )));
            };
            let key = key.trim();
            let values = value.trim();
            let parse_list_usize = |dst: &mut Vec<usize>| -> Result<()> {
                for v in values.split(',') {
                    dst.push(parse_num(v.trim(), key, line_no)?);
                }
                Ok(())
            };
            match key {
                "M" => parse_list_usize(&mut m)?,
                "N" => parse_list_usize(&mut n)?,
                "K" => parse_list_usize(&mut k)?,
                "shapes" => {
                    for tok in values.split(',') {
                        let dims: Vec<&str> = tok.trim().split('x').collect();
                        if dims.len() != 3 {
                            return Err(Error::Input(format!(
                                "line {line_no}: shape must be MxNxK, got {tok:?}"
                            )));
                        }
                        shapes.push((
                            parse_num(dims[0], "shape M", line_no)?,
                            parse_num(dims[1], "shape N", line_no)?,
                            parse_num(dims[2], "shape K", line_no)?,
                        ));
                    }
                }
                "spA" | "spB" => {
                    let dst = if key == "spA" { &mut sp_a } else { &mut sp_b };
                    for v in values.split(',') {
                        let x: f64 = parse_num(v.trim(), key, line_no)?;
                        if !(0.0..=1.0).contains(&x) {
                            return Err(Error::Input(format!(
                                "line {line_no}: sparsity {x} outside [0,1]"
                            )));
                        }
                        dst.push(x);
                    }
                }
                "seed" => seed = parse_num(values, key, line_no)?,
                other => {
                    return Err(Error::Input(format!(
                        "line {line_no}: unknown grid key {other:?}"
                    )))
                }
            }
        }
        let grid = GridSpec { m, n, k, shapes, sp_a, sp_b, seed };
        let dims_ok = if grid.shapes.is_empty() {
            !grid.m.is_empty() && !grid.n.is_empty() && !grid.k.is_empty()
        } else {
            grid.m.is_empty() && grid.n.is_empty() && grid.k.is_empty()
        };
        if !dims_ok || grid.sp_a.is_empty() || grid.sp_b.is_empty() {
            return Err(Error::Input(
                "grid needs spA, spB and either shapes or all of M, N, K".into(),
            ));
        }
        Ok(grid)
    }

    fn shape_list(&self) -> Vec<(usize, usize, usize)> {
        if !self.shapes.is_empty() {
            return self.shapes.clone();
        }
        let mut out = Vec::new();
        for &m in &self.m {
            for &n in &self.n {
                for &k in &self.k {
                    out.push((m, n, k));
                }
            }
        }
        out
    }

    /// Points in deterministic cross-product order; each point gets a
    /// distinct derived seed.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        let mut index = 0u64;
        for (m, n, k) in self.shape_list() {
            for &sp_a in &self.sp_a {
                for &sp_b in &self.sp_b {
                    out.push(GridPoint {
                        m,
                        n,
                        k,
                        sp_a,
                        sp_b,
                        seed: splitmix64(self.seed ^ index),
                    });
                    index += 1;
                }
            }
        }
        out
    }
}

/// SplitMix64 step, used to derive independent per-point seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
