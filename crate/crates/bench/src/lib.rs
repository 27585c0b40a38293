//! Criterion benchmarks for the point-cloud pipeline; see `benches/pipeline.rs`.
