//! Criterion benchmarks for the controller; see `benches/controller.rs`.
