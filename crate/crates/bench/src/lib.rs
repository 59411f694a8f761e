//! Benchmarks for the grid kernels; see `benches/kernels.rs`.
