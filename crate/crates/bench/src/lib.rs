//! Criterion benchmarks for the `foveadrive` layers and model; see `benches/`.
