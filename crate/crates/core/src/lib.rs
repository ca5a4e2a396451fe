//! Simulation core for a quantum-enhanced stellar interferometer whose
//! auxiliary sources are tuned against channel loss.
//!
//! The pipeline runs bottom-up:
//!
//! - [`fock`]: exact multimode Fock-space engine (states, linear circuits, loss).
//! - [`source`]: photon-number statistics of coherent, heralded and generic sources
//!   after the fiber channel, plus intensity optimization.
//! - [`detection`]: outcome tables `P(m|phi) = K0 + K1 cos(phi) + K2 sin(phi)` for
//!   threshold detectors, including efficiency and dark counts.
//! - [`estimation`]: Fisher information, Cramér–Rao bounds, multinomial sampling and
//!   maximum-likelihood phase/angle estimation.

// `!(x >= 0.0)` style guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinatorics;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod fock;
pub mod optimize;
pub mod source;

pub use error::{Error, Result};
