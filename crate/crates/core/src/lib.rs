//! Simulation and characterization toolkit for quantum gate teleportation
//! between two networked trapped-ion modules.
//!
//! The crate is layered bottom-up:
//!
//! * [`quantum`]: dense state-vector / density-matrix engine, Pauli algebra,
//!   Kraus channels.
//! * [`noise`]: SPAM POVMs, depolarizing and dephasing channels, noisy Bell
//!   pairs, and the per-module [`noise::NoiseModel`].
//! * [`link`]: heralded, try-until-success remote entanglement.
//! * [`runtime`]: one module as an agent: transfers, local CZ, dynamical
//!   decoupling, mid-circuit readout, classical bit channel.
//! * [`protocol`]: the teleported CZ built from the above.
//! * [`compiler`]: circuit IR, two-qubit synthesis into CZ layers, Grover.
//! * [`tomography`]: process/state tomography with diluted MLE.
//! * [`calibration`]: composite transfer pulse and randomized benchmarking.
//! * [`experiments`]: config, named experiments, result JSON, error budget.
//!
//! Qubit ordering is little-endian throughout: the first qubit of a state is
//! the least significant bit of a basis index.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod compiler;
pub mod error;
pub mod experiments;
pub mod link;
pub mod linalg;
pub mod noise;
pub mod protocol;
pub mod quantum;
pub mod rng;
pub mod runtime;
pub mod tomography;

pub use error::{Error, Result};
