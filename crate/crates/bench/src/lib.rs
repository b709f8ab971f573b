//! Benchmark-only crate; see `benches/controller.rs`.
//!
//! Run with `cargo bench -p lpvmpc-bench`.
