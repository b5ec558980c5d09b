//! Simulation of autonomous error correction and reset in a four-photon Kerr
//! parametric oscillator coupled to a lossy ancilla.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod lindblad;
pub mod model;
pub mod spectrum;

pub use error::{Error, Result};
