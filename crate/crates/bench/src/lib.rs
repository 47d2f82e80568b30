//! Criterion benchmarks for fuselab; see `benches/`.
