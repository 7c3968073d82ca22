//! Cycle-level simulator of a reconfigurable sparse-sparse matrix
//! multiplication (SpMSpM) accelerator.
//!
//! The modeled machine executes `C[M,N] = A[M,K] x B[K,N]` on compressed
//! operands under any of six loop-order dataflows: inner product, outer
//! product and Gustavson's (row-wise) product, each in an M-stationary or
//! N-stationary variant. One hardware substrate serves all six: a
//! distribution network feeding a row of multipliers, a merger-reduction
//! tree whose nodes act as adders or comparators, and a three-structure L1
//! (stationary FIFO, streaming set-associative cache, psum scratchpad)
//! backed by a latency/bandwidth DRAM model.
//!
//! Crate layout follows the machine:
//!
//! * [`sparse`] - CSR/CSC matrices, fibers, dense oracles, file formats.
//! * [`dataflow`] - the six dataflows, their properties and the
//!   inter-layer format-transition rules.
//! * [`noc`] - distribution network, multipliers and the merger-reduction
//!   tree.
//! * [`mem`] - FIFO, streaming cache, psum scratchpad, write buffer, DRAM.
//! * [`engine`] - tile planning and the cycle-level layer simulation.
//! * [`harness`] - configuration, dataflow selection strategies, model
//!   chains, sweeps and reports.

pub mod dataflow;
pub mod engine;
pub mod harness;
pub mod mem;
pub mod noc;
pub mod sparse;

pub use dataflow::Dataflow;
pub use engine::{run_layer, LayerSpec, SimResult};
pub use harness::config::AcceleratorConfig;
pub use sparse::{CompressedMatrix, DenseMatrix, Element, Fiber, MajorAxis};

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// configuration errors exit 2, input errors exit 3 and internal
/// invariant violations exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Invariant(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
