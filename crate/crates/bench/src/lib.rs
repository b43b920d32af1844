//! Criterion benchmarks for the tensor kernels, the network, the physical
//! constraints and the verification metrics. Run with `cargo bench -p droughtformer-bench`.
