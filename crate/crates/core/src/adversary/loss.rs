//! Evasion, communication, power and spectral deception losses.
//!
//! Each loss has a per-frame scalar form and a batched graph form used during
//! training. The two routes are computed independently; tests check that they
//! agree.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::{evm, PulseShape};
use crate::nn::{huber_value, Graph, Tensor, Var};
use crate::signal::{energy, fft_slice, IQSignal};

/// Upper clamp on the true-class confidence before the log.
pub const PS_CLAMP: f64 = 1.0 - 1e-7;

/// Tolerance on `alpha + beta + gamma == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Which loss fills the third slot of the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeceptionKind {
    #[serde(rename = "power")]
    Power,
    #[serde(rename = "mse-fft")]
    MseFft,
    #[serde(rename = "huber-fft")]
    HuberFft,
}

impl DeceptionKind {
    pub fn name(self) -> &'static str {
        match self {
            DeceptionKind::Power => "power",
            DeceptionKind::MseFft => "mse-fft",
            DeceptionKind::HuberFft => "huber-fft",
        }
    }
}

impl fmt::Display for DeceptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeceptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            DeceptionKind::Power,
            DeceptionKind::MseFft,
            DeceptionKind::HuberFft,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            Error::invalid(format!(
                "unknown loss '{s}'; expected power|mse-fft|huber-fft"
            ))
        })
    }
}

/// How the spectral losses compare clean and perturbation spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SpectralMode {
    /// `d_k = |S_k| - |P_k|`
    #[default]
    #[serde(rename = "magnitude")]
    Magnitude,
    /// `d_k = |S_k - P_k|`
    #[serde(rename = "complex")]
    Complex,
}

impl FromStr for SpectralMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(SpectralMode::Magnitude),
            "complex" => Ok(SpectralMode::Complex),
            _ => Err(Error::invalid(format!(
                "unknown spectral mode '{s}'; expected magnitude|complex"
            ))),
        }
    }
}

/// `(alpha, beta, gamma)` for evasion, communication and the third loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kind: DeceptionKind,
    pub delta: f64,
    #[serde(default)]
    pub mode: SpectralMode,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, kind: DeceptionKind, delta: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            gamma,
            kind,
            delta,
            mode: SpectralMode::Magnitude,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn with_mode(mut self, mode: SpectralMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "alpha + beta + gamma = {sum}, must equal 1"
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::invalid(format!(
                "delta = {} must be positive",
                self.delta
            )));
        }
        Ok(())
    }
}

/// `-ln(1 - p_s)` with `p_s` clamped to [`PS_CLAMP`].
pub fn loss_adversarial(p_s: f64) -> f64 {
    -(1.0 - p_s.clamp(0.0, PS_CLAMP)).ln()
}

/// `b_r * EVM(clean, perturbed)`.
pub fn loss_communication(
    b_r: f64,
    clean: &IQSignal,
    perturbed: &IQSignal,
    shape: &PulseShape,
) -> Result<f64> {
    Ok(b_r * evm(clean, perturbed, shape)?)
}

/// `E_p / E_s`.
pub fn loss_power(clean: &IQSignal, perturbation: &IQSignal) -> Result<f64> {
    let es = energy(clean);
    if es <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(energy(perturbation) / es)
}

pub fn mse_mean(diffs: &[f64]) -> f64 {
    diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64
}

pub fn huber_mean(diffs: &[f64], delta: f64) -> f64 {
    diffs.iter().map(|&d| huber_value(d, delta)).sum::<f64>() / diffs.len() as f64
}

/// Per-bin spectral differences and the normalizing denominator
/// `(1/n) sum |S_k|^2`.
pub fn spectral_differences(
    clean: &IQSignal,
    perturbation: &IQSignal,
    mode: SpectralMode,
) -> Result<(Vec<f64>, f64)> {
    if clean.len() != perturbation.len() {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            actual: perturbation.len(),
        });
    }
    let s = fft_slice(clean.samples())?;
    let p = fft_slice(perturbation.samples())?;
    let den = s.iter().map(Complex64::norm_sqr).sum::<f64>() / s.len() as f64;
    if den <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let diffs = s
        .iter()
        .zip(&p)
        .map(|(a, b)| match mode {
            SpectralMode::Magnitude => a.norm() - b.norm(),
            SpectralMode::Complex => (a - b).norm(),
        })
        .collect();
    Ok((diffs, den))
}

/// Normalized MSE between clean and perturbation magnitude spectra, in `[0, 1]`.
pub fn loss_mse_fft(clean: &IQSignal, perturbation: &IQSignal) -> Result<f64> {
    spectral_loss(
        clean,
        perturbation,
        DeceptionKind::MseFft,
        1.0,
        SpectralMode::Magnitude,
    )
}

/// Normalized Huber penalty between magnitude spectra, in `[0, 1]`.
pub fn loss_huber_fft(clean: &IQSignal, perturbation: &IQSignal, delta: f64) -> Result<f64> {
    spectral_loss(
        clean,
        perturbation,
        DeceptionKind::HuberFft,
        delta,
        SpectralMode::Magnitude,
    )
}

/// Third-slot loss for any [`DeceptionKind`].
pub fn spectral_loss(
    clean: &IQSignal,
    perturbation: &IQSignal,
    kind: DeceptionKind,
    delta: f64,
    mode: SpectralMode,
) -> Result<f64> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid(format!(
            "huber delta {delta} must be positive"
        )));
    }
    if kind == DeceptionKind::Power {
        return loss_power(clean, perturbation);
    }
    let (diffs, den) = spectral_differences(clean, perturbation, mode)?;
    let raw = match kind {
        DeceptionKind::MseFft => mse_mean(&diffs),
        _ => huber_mean(&diffs, delta),
    };
    Ok((raw / den).clamp(0.0, 1.0))
}

/// `alpha * l_adv + beta * l_comm + gamma * l_third`.
pub fn loss_total(weights: &LossWeights, l_adv: f64, l_comm: f64, l_third: f64) -> Result<f64> {
    weights.validate()?;
    Ok(weights.alpha * l_adv + weights.beta * l_comm + weights.gamma * l_third)
}

/// Batch mean of `-ln(1 - p_s)` from a `[batch, classes]` probability node.
pub fn graph_adversarial(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let ps = g.pick(probs, labels)?;
    let l = g.neg_log_one_minus(ps, PS_CLAMP)?;
    g.mean(l)
}

/// Mean `|S_tx - S_tx+p|` over every symbol of every frame.
pub fn graph_evm(g: &mut Graph, clean: Var, perturbed: Var, shape: &PulseShape) -> Result<Var> {
    let diff = g.sub(perturbed, clean)?;
    let syms = g.matched_symbols(diff, shape)?;
    let mag = g.complex_abs(syms)?;
    g.mean(mag)
}

/// `b_r * EVM`; `b_r` is a constant, so the gradient flows only through the EVM.
pub fn graph_communication(
    g: &mut Graph,
    b_r: f64,
    clean: Var,
    perturbed: Var,
    shape: &PulseShape,
) -> Result<Var> {
    let e = graph_evm(g, clean, perturbed, shape)?;
    g.scale(e, b_r)
}

/// Batch mean of `E_p / E_s`; `clean_energy[b]` is frame `b`'s `E_s`.
pub fn graph_power(g: &mut Graph, perturbation: Var, clean_energy: &[f64]) -> Result<Var> {
    if clean_energy.iter().any(|&e| e <= 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let sq = g.square(perturbation)?;
    let per_frame = g.row_mean(sq)?;
    let cols = (g.value(sq).numel() / clean_energy.len()) as f64;
    let inv: Vec<f64> = clean_energy.iter().map(|e| cols / e).collect();
    let ratio = g.scale_rows(per_frame, &inv)?;
    g.mean(ratio)
}

/// Clean-signal spectra prepared once per batch for the graph spectral loss.
pub struct CleanSpectra {
    /// `[batch, 2, n]` complex DFT.
    pub spectrum: Tensor,
    /// `[batch, n]` magnitudes.
    pub magnitude: Tensor,
    /// `(1/n) sum_k |S_k|^2` per frame.
    pub denominators: Vec<f64>,
}

impl CleanSpectra {
    pub fn new(frames: &[&[Complex64]]) -> Result<Self> {
        let batch = frames.len();
        let n = frames.first().map(|f| f.len()).unwrap_or(0);
        let mut spectrum = vec![0.0; batch * 2 * n];
        let mut magnitude = vec![0.0; batch * n];
        let mut denominators = Vec::with_capacity(batch);
        for (b, f) in frames.iter().enumerate() {
            let s = fft_slice(f)?;
            let mut den = 0.0;
            for (k, z) in s.iter().enumerate() {
                spectrum[b * 2 * n + k] = z.re;
                spectrum[b * 2 * n + n + k] = z.im;
                magnitude[b * n + k] = z.norm();
                den += z.norm_sqr();
            }
            den /= n as f64;
            if den <= 0.0 {
                return Err(Error::ZeroEnergy);
            }
            denominators.push(den);
        }
        Ok(Self {
            spectrum: Tensor::new(vec![batch, 2, n], spectrum)?,
            magnitude: Tensor::new(vec![batch, n], magnitude)?,
            denominators,
        })
    }
}

/// Batch mean of the normalized, clamped MSE-FFT or Huber-FFT loss.
pub fn graph_spectral(
    g: &mut Graph,
    perturbation: Var,
    clean: &CleanSpectra,
    kind: DeceptionKind,
    delta: f64,
    mode: SpectralMode,
) -> Result<Var> {
    let p = g.fft(perturbation)?;
    let d = match mode {
        SpectralMode::Magnitude => {
            let mag = g.complex_abs(p)?;
            let neg = g.scale(mag, -1.0)?;
            g.add_const(neg, &clean.magnitude)?
        }
        SpectralMode::Complex => {
            let neg = g.scale(p, -1.0)?;
            let diff = g.add_const(neg, &clean.spectrum)?;
            g.complex_abs(diff)?
        }
    };
    let pen = match kind {
        DeceptionKind::MseFft => g.square(d)?,
        DeceptionKind::HuberFft => g.huber(d, delta)?,
        DeceptionKind::Power => {
            return Err(Error::invalid("power is not a spectral loss"));
        }
    };
    let raw = g.row_mean(pen)?;
    let inv: Vec<f64> = clean.denominators.iter().map(|d| 1.0 / d).collect();
    let norm = g.scale_rows(raw, &inv)?;
    let clamped = g.clamp(norm, 0.0, 1.0)?;
    g.mean(clamped)
}
