//! Autoregressive protein fitness prediction: a transformer with grouped
//! k-mer convolution attention and grouped linear distance biases, fused at
//! inference with alignment-derived pseudocount profiles, plus the harness
//! that benchmarks mutation-effect scores against deep mutational scans.

pub mod seq;
pub mod nn;
pub mod model;
pub mod train;
pub mod retrieval;
pub mod score;
pub mod bench;
pub mod synthetic;
