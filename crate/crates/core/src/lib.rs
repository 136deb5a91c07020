//! Simulation and security evaluation of signal-injection attacks on
//! ADC-based sensor front ends.
//!
//! An adversarial waveform passes through a circuit channel, the ADC's
//! sample-and-hold filter, a non-linear amplifier and ESD clamps before it is
//! sampled and quantized. The [`security`] module turns captured traces into
//! critical security thresholds; [`sweep`] runs campaigns over carrier, power
//! and depth; [`instrument`] exposes the simulated bench over TCP.

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod trace;
pub mod noise;
pub mod signalgen;
pub mod channel;
pub mod adcmodel;
pub mod similarity;
pub mod security;
pub mod instrument;
pub mod sweep;

pub use error::{Error, Result};
pub use trace::{Spectrum, Trace};
