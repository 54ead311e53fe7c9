//! Criterion benchmarks for `flocking-core` live under `benches/`.
