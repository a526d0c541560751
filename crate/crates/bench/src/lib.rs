//! Benchmarks for `masbus` live under `benches/`.
