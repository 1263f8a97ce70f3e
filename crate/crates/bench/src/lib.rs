//! Benchmark crate: the workloads live in `benches/`.
