//! Core model of obfuscated arbiter PUFs (OB-PUFs).
//!
//! Everything here is pure computation over explicit RNG streams and works in
//! `no_std` environments with an allocator:
//!
//! * [`apuf`] simulates arbiter PUFs under the linear additive delay model.
//! * [`obfuscation`] holds pattern vectors, challenge expansion, response
//!   masking, the OB-PUF device and per-session pattern reconfiguration.
//! * [`protocol`] is the server/prover authentication protocol together with
//!   its length-prefixed wire codec.
//! * [`metrics`] covers distance statistics, the binomial estimators and the
//!   FAR/FRR/EER solver.
//! * [`attack`] is a CMA-ES engine plus Hamming-distance fitness functions
//!   used to mount modeling attacks.
//!
//! File formats, sockets, timing and the command line live in the `obpuf`
//! companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod apuf;
pub mod attack;
pub mod bits;
mod error;
pub mod metrics;
pub mod obfuscation;
pub mod protocol;
pub mod rng;

pub use bits::BitString;
pub use error::{Error, Result};
