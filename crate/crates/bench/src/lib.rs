//! Benchmarks for the lawdr pipeline stages; see `benches/`.
