//! Simulation of a finite-extinction-ratio IQ-modulator link received by a
//! 3-branch phase-diverse direct-detection front end.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dpd;
pub mod error;
pub mod harness;
pub mod optics;
pub mod receiver;
pub mod rng;
pub mod rx;
pub mod signal;
pub mod tx;

pub use error::{Error, Result};
pub use signal::{RealSignal, Waveform, C64};
