//! Shared fixtures for the criterion benchmarks.

use linpoison::{gen_instance, Family, GeneratorSpec, LinearMdp, Policy};

/// An attackable instance of the given size.
pub fn instance(states: usize, actions: usize, horizon: usize, dim: usize) -> (LinearMdp, Policy) {
    gen_instance(&GeneratorSpec::new(states, actions, horizon, dim, 0, Family::AttackableByConstruction))
        .expect("generator builds the benchmark instance")
}
