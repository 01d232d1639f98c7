//! Criterion benchmarks for the segsolve core; see `benches/`.
