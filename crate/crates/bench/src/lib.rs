//! Criterion benchmarks for the minvae pipeline; see `benches/`.
