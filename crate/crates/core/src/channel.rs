//! AWGN channel. SNR is signal power over noise power per complex sample,
//! where signal power is measured on the input rather than assumed.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::IQSignal;

/// One per-frame channel realisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub snr_db: f64,
    pub noise_seed: u64,
}

/// Circular complex Gaussian noise samples with total variance `variance`.
pub fn complex_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> Vec<Complex64> {
    let sigma = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Slice form of [`awgn`].
pub fn awgn_samples<R: Rng + ?Sized>(
    samples: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("snr {snr_db} dB is not finite")));
    }
    let power = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len().max(1) as f64;
    if power <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let variance = power / 10f64.powf(snr_db / 10.0);
    let noise = complex_noise(rng, samples.len(), variance);
    Ok(samples.iter().zip(noise).map(|(x, n)| x + n).collect())
}

/// Adds noise with per-sample variance `P / 10^(snr_db/10)`, `P` the measured
/// mean power of `signal`.
pub fn awgn<R: Rng + ?Sized>(signal: &IQSignal, snr_db: f64, rng: &mut R) -> Result<IQSignal> {
    IQSignal::new(
        awgn_samples(signal.samples(), snr_db, rng)?,
        signal.samples_per_symbol(),
    )
}

pub fn snr_to_ebn0(snr_db: f64, sps: usize, bits_per_symbol: usize) -> f64 {
    snr_db + 10.0 * (sps as f64).log10() - 10.0 * (bits_per_symbol as f64).log10()
}

pub fn ebn0_to_snr(ebn0_db: f64, sps: usize, bits_per_symbol: usize) -> f64 {
    ebn0_db - 10.0 * (sps as f64).log10() + 10.0 * (bits_per_symbol as f64).log10()
}

/// Uniform draw in `[lo_db, hi_db]`.
pub fn draw_snr<R: Rng + ?Sized>(rng: &mut R, lo_db: f64, hi_db: f64) -> Result<f64> {
    if !(lo_db.is_finite() && hi_db.is_finite()) || lo_db > hi_db {
        return Err(Error::invalid(format!(
            "invalid SNR interval [{lo_db}, {hi_db}]"
        )));
    }
    if lo_db == hi_db {
        return Ok(lo_db);
    }
    Ok(rng.gen_range(lo_db..=hi_db))
}
