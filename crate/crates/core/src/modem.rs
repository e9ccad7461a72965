//! Gray-coded PSK/QAM mapping, root-raised-cosine shaping, matched-filter
//! demodulation, BER/EVM measurement and closed-form BER references.
//!
//! Frames are shaped cyclically: the pulse wraps around the frame boundary, so
//! every frame is self-contained and carries no edge transients. The matched
//! filter uses the same wrap, which makes the noiseless round trip exact.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::IQSignal;

pub const DEFAULT_ROLL_OFF: f64 = 0.35;
pub const DEFAULT_SPAN_SYMBOLS: usize = 8;
pub const DEFAULT_SPS: usize = 8;
/// Complex samples per frame.
pub const FRAME_LEN: usize = 128;
pub const SYMBOLS_PER_FRAME: usize = FRAME_LEN / DEFAULT_SPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "bpsk")]
    Bpsk,
    #[serde(rename = "qpsk")]
    Qpsk,
    #[serde(rename = "8psk")]
    Psk8,
    #[serde(rename = "16qam")]
    Qam16,
    #[serde(rename = "64qam")]
    Qam64,
}

pub const VALID_SCHEMES: &str = "bpsk,qpsk,8psk,16qam,64qam";

impl Scheme {
    /// Class order used by the classifier's output vector.
    pub const ALL: [Scheme; 5] = [
        Scheme::Bpsk,
        Scheme::Qpsk,
        Scheme::Psk8,
        Scheme::Qam16,
        Scheme::Qam64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bpsk => "bpsk",
            Scheme::Qpsk => "qpsk",
            Scheme::Psk8 => "8psk",
            Scheme::Qam16 => "16qam",
            Scheme::Qam64 => "64qam",
        }
    }

    pub fn index(self) -> usize {
        Scheme::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Scheme> {
        Scheme::ALL.get(i).copied()
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Scheme::Bpsk => 1,
            Scheme::Qpsk => 2,
            Scheme::Psk8 => 3,
            Scheme::Qam16 => 4,
            Scheme::Qam64 => 6,
        }
    }

    pub fn is_psk(self) -> bool {
        matches!(self, Scheme::Bpsk | Scheme::Qpsk | Scheme::Psk8)
    }

    pub fn constellation(self) -> &'static Constellation {
        static TABLES: OnceLock<Vec<Constellation>> = OnceLock::new();
        &TABLES.get_or_init(|| {
            Scheme::ALL
                .iter()
                .map(|&s| Constellation::build(s))
                .collect()
        })[self.index()]
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|sch| sch.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown scheme '{s}'; valid schemes: {VALID_SCHEMES}"
                ))
            })
    }
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

/// Symbol alphabet of one scheme. `points[w]` is the point carrying the
/// MSB-first bit word `w`.
#[derive(Debug, Clone)]
pub struct Constellation {
    scheme: Scheme,
    points: Vec<Complex64>,
    bits_per_symbol: usize,
}

impl Constellation {
    fn build(scheme: Scheme) -> Self {
        let k = scheme.bits_per_symbol();
        let m = 1usize << k;
        let mut points = vec![Complex64::new(0.0, 0.0); m];
        match scheme {
            Scheme::Bpsk => {
                points[0] = Complex64::new(1.0, 0.0);
                points[1] = Complex64::new(-1.0, 0.0);
            }
            Scheme::Qpsk => {
                // 00 -> (+1+j), 01 -> (-1+j), 11 -> (-1-j), 10 -> (+1-j), over sqrt 2
                points[0b00] = Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
                points[0b01] = Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2);
                points[0b11] = Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2);
                points[0b10] = Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2);
            }
            Scheme::Psk8 => {
                for pos in 0..m {
                    points[gray(pos)] =
                        Complex64::from_polar(1.0, 2.0 * PI * pos as f64 / m as f64);
                }
            }
            Scheme::Qam16 | Scheme::Qam64 => {
                // Gray-coded PAM per axis: high half of the word on I, low half on Q.
                let half = k / 2;
                let levels = 1usize << half;
                let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
                for i_pos in 0..levels {
                    for q_pos in 0..levels {
                        let word = (gray(i_pos) << half) | gray(q_pos);
                        let amp = |p: usize| (2.0 * p as f64 - (levels as f64 - 1.0)) / scale;
                        points[word] = Complex64::new(amp(i_pos), amp(q_pos));
                    }
                }
            }
        }
        Self {
            scheme,
            points,
            bits_per_symbol: k,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn point(&self, word: usize) -> Complex64 {
        self.points[word]
    }

    /// Minimum-distance hard decision; returns the bit word.
    pub fn decide(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (w, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = w;
            }
        }
        best
    }

    pub fn map_bits(&self, bits: &BitVector) -> Result<Vec<Complex64>> {
        let k = self.bits_per_symbol;
        if !bits.len().is_multiple_of(k) {
            return Err(Error::invalid(format!(
                "{} bits do not divide into {k}-bit symbols",
                bits.len()
            )));
        }
        Ok(bits
            .as_slice()
            .chunks(k)
            .map(|chunk| {
                let word = chunk.iter().fold(0usize, |w, &b| (w << 1) | b as usize);
                self.points[word]
            })
            .collect())
    }

    pub fn unmap_symbols(&self, symbols: &[Complex64]) -> BitVector {
        let k = self.bits_per_symbol;
        let mut bits = Vec::with_capacity(symbols.len() * k);
        for &z in symbols {
            let w = self.decide(z);
            for shift in (0..k).rev() {
                bits.push(((w >> shift) & 1) as u8);
            }
        }
        BitVector(bits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("bit values must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        Self((0..n).map(|_| rng.gen_range(0..=1u8)).collect())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hamming(&self, other: &BitVector) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }
}

/// Root-raised-cosine pulse with unit-energy, symmetric taps.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    roll_off: f64,
    span_symbols: usize,
    sps: usize,
    taps: Vec<f64>,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self::rrc(DEFAULT_ROLL_OFF, DEFAULT_SPAN_SYMBOLS, DEFAULT_SPS).unwrap()
    }
}

impl PulseShape {
    pub fn rrc(roll_off: f64, span_symbols: usize, sps: usize) -> Result<Self> {
        if !(roll_off > 0.0 && roll_off < 1.0) {
            return Err(Error::invalid(format!(
                "roll-off {roll_off} outside (0, 1)"
            )));
        }
        if sps == 0 || span_symbols == 0 || !(span_symbols * sps).is_multiple_of(2) {
            return Err(Error::invalid(
                "span_symbols * sps must be a positive even number",
            ));
        }
        let len = span_symbols * sps + 1;
        let center = (len / 2) as f64;
        let b = roll_off;
        let mut taps: Vec<f64> = (0..len)
            .map(|i| {
                let t = (i as f64 - center) / sps as f64;
                if t.abs() < 1e-12 {
                    1.0 - b + 4.0 * b / PI
                } else if ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
                    b / 2f64.sqrt()
                        * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                            + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
                } else {
                    ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                        / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
                }
            })
            .collect();
        let norm = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
        taps.iter_mut().for_each(|h| *h /= norm);
        Ok(Self {
            roll_off,
            span_symbols,
            sps,
            taps,
        })
    }

    pub fn roll_off(&self) -> f64 {
        self.roll_off
    }

    pub fn span_symbols(&self) -> usize {
        self.span_symbols
    }

    pub fn sps(&self) -> usize {
        self.sps
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn half_len(&self) -> isize {
        (self.taps.len() / 2) as isize
    }

    /// Cyclic shaping of a symbol sequence; output has `symbols.len() * sps`
    /// samples and mean power equal to the mean symbol energy.
    pub fn shape(&self, symbols: &[Complex64]) -> Vec<Complex64> {
        let n = symbols.len() * self.sps;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        if n == 0 {
            return out;
        }
        let gain = (self.sps as f64).sqrt();
        let half = self.half_len();
        for (k, &s) in symbols.iter().enumerate() {
            let base = (k * self.sps) as isize;
            let s = s * gain;
            for (i, &h) in self.taps.iter().enumerate() {
                let t = (base + i as isize - half).rem_euclid(n as isize) as usize;
                out[t] += s * h;
            }
        }
        out
    }

    /// Cyclic matched filter sampled at the symbol instants. The sample count
    /// must be a multiple of `sps`.
    pub fn matched_symbols(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = samples.len();
        if n == 0 || !n.is_multiple_of(self.sps) {
            return Err(Error::LengthMismatch {
                expected: n.div_ceil(self.sps).max(1) * self.sps,
                actual: n,
            });
        }
        let gain = 1.0 / (self.sps as f64).sqrt();
        let half = self.half_len();
        Ok((0..n / self.sps)
            .map(|m| {
                let base = (m * self.sps) as isize;
                let acc: Complex64 = self
                    .taps
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| {
                        samples[(base + i as isize - half).rem_euclid(n as isize) as usize] * h
                    })
                    .sum();
                acc * gain
            })
            .collect())
    }

    /// Adjoint (transpose) of [`PulseShape::matched_symbols`]: maps symbol-rate
    /// values back onto `n` samples.
    pub fn matched_symbols_adjoint(&self, symbols: &[Complex64], n: usize) -> Vec<Complex64> {
        let gain = 1.0 / (self.sps as f64).sqrt();
        let half = self.half_len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (m, &y) in symbols.iter().enumerate() {
            let base = (m * self.sps) as isize;
            let y = y * gain;
            for (i, &h) in self.taps.iter().enumerate() {
                out[(base + i as isize - half).rem_euclid(n as isize) as usize] += y * h;
            }
        }
        out
    }
}

/// Gray-maps `bits`, then shapes them cyclically with `shape`.
pub fn modulate(
    bits: &BitVector,
    constellation: &Constellation,
    shape: &PulseShape,
) -> Result<IQSignal> {
    let symbols = constellation.map_bits(bits)?;
    if symbols.is_empty() {
        return Err(Error::invalid("cannot modulate an empty bit vector"));
    }
    IQSignal::new(shape.shape(&symbols), shape.sps())
}

/// Frame-synchronous receiver: matched filter, decimation, minimum-distance
/// decision, inverse Gray map.
pub fn demodulate(
    signal: &IQSignal,
    constellation: &Constellation,
    shape: &PulseShape,
) -> Result<BitVector> {
    let symbols = shape.matched_symbols(signal.samples())?;
    Ok(constellation.unmap_symbols(&symbols))
}

pub fn bit_error_rate(tx: &BitVector, rx: &BitVector) -> Result<f64> {
    if tx.is_empty() {
        return Err(Error::invalid("bit error rate of an empty vector"));
    }
    Ok(tx.hamming(rx)? as f64 / tx.len() as f64)
}

/// Mean absolute error vector between two symbol sequences.
pub fn evm_symbols(clean: &[Complex64], perturbed: &[Complex64]) -> Result<f64> {
    if clean.len() != perturbed.len() {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            actual: perturbed.len(),
        });
    }
    if clean.is_empty() {
        return Err(Error::invalid("evm of an empty symbol sequence"));
    }
    Ok(clean
        .iter()
        .zip(perturbed)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / clean.len() as f64)
}

/// Mean `|S_tx - S_tx+p|` over symbol instants after matched filtering.
pub fn evm(clean: &IQSignal, perturbed: &IQSignal, shape: &PulseShape) -> Result<f64> {
    if clean.len() != perturbed.len() {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            actual: perturbed.len(),
        });
    }
    let a = shape.matched_symbols(clean.samples())?;
    let b = shape.matched_symbols(perturbed.samples())?;
    evm_symbols(&a, &b)
}

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / 2f64.sqrt())
}

/// Closed-form (BPSK/QPSK) or nearest-neighbour Gray approximation (8PSK,
/// square QAM) of the bit error rate over AWGN.
pub fn theoretical_ber(scheme: Scheme, ebn0_db: f64) -> f64 {
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    let k = scheme.bits_per_symbol() as f64;
    let m = (1usize << scheme.bits_per_symbol()) as f64;
    match scheme {
        Scheme::Bpsk | Scheme::Qpsk => q_function((2.0 * ebn0).sqrt()),
        Scheme::Psk8 => (2.0 / k) * q_function((2.0 * k * ebn0).sqrt() * (PI / m).sin()),
        Scheme::Qam16 | Scheme::Qam64 => {
            (4.0 / k) * (1.0 - 1.0 / m.sqrt()) * q_function((3.0 * k * ebn0 / (m - 1.0)).sqrt())
        }
    }
}
