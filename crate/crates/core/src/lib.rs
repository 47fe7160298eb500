//! Two-species fermion mixtures in a one-dimensional tilted double well:
//! discrete-variable orbitals, a matrix-free many-body Hamiltonian, Krylov
//! dynamics, observables and simulated single-shot imaging.

pub mod dvr;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod hamiltonian;
pub mod harness;
pub mod observables;
pub mod singleshot;

pub use error::{Error, Result};
