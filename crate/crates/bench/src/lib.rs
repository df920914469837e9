//! Benchmarks for the hot kernels live in `benches/`; run them with
//! `cargo bench -p semimarkov-bench`.
