//! Spectrum-deceiving adversarial perturbations for I/Q radio frames.
//!
//! Modules, bottom-up: [`signal`] (I/Q containers, FFT, PSD), [`modem`]
//! (constellations, RRC shaping), [`channel`] (AWGN), [`nn`] (tape autodiff,
//! Adam, checkpoints), [`adversary`] (classifier, mutation network, losses) and
//! [`harness`] (datasets, training, evaluation).

pub mod adversary;
pub mod channel;
pub mod error;
pub mod harness;
pub mod modem;
pub mod nn;
pub mod signal;

pub use error::{Error, Result};
pub use modem::{BitVector, Constellation, PulseShape, Scheme};
pub use signal::{BandSpec, IQSignal, Spectrum};
