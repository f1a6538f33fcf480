//! Benchmarks for the core solver live under `benches/`.
