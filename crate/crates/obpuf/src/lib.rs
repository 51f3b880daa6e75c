//! File formats, transports, parallel evaluation and the batch front-end for
//! the `obpuf-core` simulation library.

pub mod commands;
pub mod formats;
pub mod output;
pub mod parallel;
pub mod transport;

pub use obpuf_core as core;
