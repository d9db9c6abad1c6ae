//! Exact linear-algebra engine for a handful of qubits.

mod channel;
pub mod gates;
mod pauli;
mod qubit;
mod state;

pub use channel::KrausChannel;
pub use pauli::{pauli_expansion, Pauli, PauliString};
pub use qubit::{ModuleId, QubitId, QubitRole};
pub use state::{Basis, QuantumState};
