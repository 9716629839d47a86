//! Benchmarks for the planner and simulator live under `benches/`.
