//! Benchmarks only; see `benches/qsigma.rs`.
