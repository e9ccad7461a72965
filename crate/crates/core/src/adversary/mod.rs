//! Eavesdropper classifier, adversarial mutation network and their losses.

mod amc;
mod amn;
pub mod loss;

pub use amc::{argmax, classify, predicted_scheme, AmcArch, AmcModel, NUM_CLASSES};
pub use amn::{AmnModel, OUTPUT_INIT_SCALE};
pub use loss::{
    loss_adversarial, loss_communication, loss_huber_fft, loss_mse_fft, loss_power, loss_total,
    DeceptionKind, LossWeights, SpectralMode,
};
