//! Benchmarks live in `benches/`; run them with `cargo bench -p multidex-bench`.

pub use multidex;
