//! Criterion benchmarks of the froglab kernels live in `benches/`.
//! Run them with `cargo bench -p froglab-bench`.
