//! Simulator and verification toolkit for qudit basis cycling.
//!
//! Builds and checks the pulse-level constructions that turn a qutrit's extra
//! level into a resource for three-qubit gates: cyclically shifted frames
//! that refocus spectator phases, cyclic cross-resonance gates, generalized
//! controlled-X constructions, and a qutrit-assisted CCZ/Toffoli, together
//! with the measurement stack (process tomography, truth tables, Ramsey phase
//! fits) used to verify them under detuning drift and decoherence.

pub mod circuit;
pub mod cr;
pub mod cycling;
pub mod error;
pub mod experiments;
pub mod frame;
pub mod gates;
pub mod linalg;
pub mod noise;
pub mod op;
pub mod pulse;
pub mod tomography;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use op::{Operator, SystemShape};
