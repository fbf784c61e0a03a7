//! Shared scene setups for the benchmark targets.
