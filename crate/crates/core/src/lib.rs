//! Verification toolkit for Hamiltonian one-step integrators.

pub mod adversary;
pub mod bump;
pub mod diagnostics;
pub mod exact_flows;
pub mod hamiltonian;
pub mod integrators;
pub mod linalg;
pub mod multidof;
pub mod point;
pub mod tape;
