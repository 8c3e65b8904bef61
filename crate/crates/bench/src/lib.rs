//! Criterion benchmarks for the swarm crates; see `benches/`.
