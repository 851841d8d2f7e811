//! Criterion benchmarks for the NILM core (see `benches/`).
