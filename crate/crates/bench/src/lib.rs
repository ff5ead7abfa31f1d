//! Benchmark-only crate; the measurements live in `benches/laboratory.rs`.
