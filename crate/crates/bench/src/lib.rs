//! Benchmark-only crate; see `benches/alignment.rs`.
