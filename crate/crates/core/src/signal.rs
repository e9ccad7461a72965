//! Complex baseband signals, a radix-2 FFT, Welch PSD estimation and
//! spectral occupancy metrics.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Floor applied to every dB value so that silent bins never produce `-inf`.
pub const DB_FLOOR: f64 = -300.0;

/// Complex baseband samples plus the oversampling factor they were produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct IQSignal {
    samples: Vec<Complex64>,
    samples_per_symbol: usize,
}

impl IQSignal {
    pub fn new(samples: Vec<Complex64>, samples_per_symbol: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal must contain at least one sample"));
        }
        if samples_per_symbol == 0 {
            return Err(Error::invalid("samples_per_symbol must be positive"));
        }
        if samples
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("signal samples".into()));
        }
        Ok(Self {
            samples,
            samples_per_symbol,
        })
    }

    pub fn zeros(n: usize, samples_per_symbol: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); n], samples_per_symbol)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    /// Sample-wise `self + other`.
    pub fn add(&self, other: &IQSignal) -> Result<IQSignal> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Sample-wise `self - other`.
    pub fn sub(&self, other: &IQSignal) -> Result<IQSignal> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> IQSignal {
        IQSignal {
            samples: self.samples.iter().map(|z| z * factor).collect(),
            samples_per_symbol: self.samples_per_symbol,
        }
    }

    fn zip_with(
        &self,
        other: &IQSignal,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<IQSignal> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        IQSignal::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            self.samples_per_symbol,
        )
    }
}

/// Unnormalized DFT bins. Bin `k` sits at normalized frequency `k/n`, folded
/// into `(-1/2, 1/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn frequency(&self, k: usize) -> f64 {
        bin_frequency(k, self.bins.len())
    }

    /// Bins reordered so frequency ascends from the most negative bin.
    pub fn centered(&self) -> Vec<Complex64> {
        fftshift(&self.bins)
    }

    pub fn into_bins(self) -> Vec<Complex64> {
        self.bins
    }
}

/// A band `|f| <= half_width` around DC, in cycles/sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    half_width: f64,
}

impl BandSpec {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width <= 0.5) {
            return Err(Error::invalid(format!(
                "band half width {half_width} outside (0, 0.5]"
            )));
        }
        Ok(Self { half_width })
    }

    /// Main lobe of a root-raised-cosine signal: `(1 + roll_off) / (2 sps)`.
    pub fn occupied(roll_off: f64, samples_per_symbol: usize) -> Result<Self> {
        Self::new((1.0 + roll_off) / (2.0 * samples_per_symbol as f64))
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn contains(&self, freq: f64) -> bool {
        freq.abs() <= self.half_width
    }
}

/// Normalized frequency of bin `k` of an `n`-point DFT, in `(-1/2, 1/2]`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

pub fn fftshift<T: Copy>(bins: &[T]) -> Vec<T> {
    let half = bins.len() / 2;
    bins[half..].iter().chain(&bins[..half]).copied().collect()
}

fn bit_reverse_permute(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
}

/// In-place iterative radix-2 transform. The inverse is scaled by `1/n`.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    bit_reverse_permute(buf);
    let sign = if inverse { 1.0 } else { -1.0 };
    // Twiddles are evaluated directly rather than by repeated multiplication
    // so the round-trip error stays near machine precision.
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(())
}

pub fn fft_slice(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut buf = samples.to_vec();
    fft_in_place(&mut buf, false)?;
    Ok(buf)
}

pub fn ifft_slice(bins: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut buf = bins.to_vec();
    fft_in_place(&mut buf, true)?;
    Ok(buf)
}

/// Unnormalized forward DFT of a power-of-two length signal.
pub fn fft(signal: &IQSignal) -> Result<Spectrum> {
    Ok(Spectrum {
        bins: fft_slice(signal.samples())?,
    })
}

/// Inverse of [`fft`]: `ifft(fft(x)) == x` to rounding.
pub fn ifft(spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    ifft_slice(&spectrum.bins)
}

pub fn energy(signal: &IQSignal) -> f64 {
    energy_of(signal.samples())
}

pub fn energy_of(samples: &[Complex64]) -> f64 {
    samples.iter().map(|z| z.norm_sqr()).sum()
}

/// Returns `(in_band, out_of_band)` spectral energy. The input is zero-padded
/// to the next power of two.
pub fn band_energy_split(samples: &[Complex64], band: BandSpec) -> Result<(f64, f64)> {
    let n = samples.len().max(1).next_power_of_two();
    let mut buf = samples.to_vec();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf, false)?;
    let (mut inside, mut outside) = (0.0, 0.0);
    for (k, z) in buf.iter().enumerate() {
        if band.contains(bin_frequency(k, n)) {
            inside += z.norm_sqr();
        } else {
            outside += z.norm_sqr();
        }
    }
    Ok((inside, outside))
}

/// Fraction of spectral energy outside `band`.
pub fn out_of_band_ratio(signal: &IQSignal, band: BandSpec) -> Result<f64> {
    let (inside, outside) = band_energy_split(signal.samples(), band)?;
    let total = inside + outside;
    if total <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(outside / total)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate: Hann window, 50% overlap, at most `max_segments` segments.
/// Output is centered (ascending from -1/2) and calibrated so white noise of
/// variance `s2` reads `s2` in every bin.
pub fn psd_linear(samples: &[Complex64], nfft: usize, max_segments: usize) -> Result<Vec<f64>> {
    if nfft == 0 || !nfft.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(nfft));
    }
    if samples.len() < nfft {
        return Err(Error::invalid(format!(
            "signal of length {} is shorter than nfft {nfft}",
            samples.len()
        )));
    }
    if max_segments == 0 {
        return Err(Error::invalid("at least one segment is required"));
    }
    let window = hann(nfft);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let hop = nfft / 2;
    let available = 1 + (samples.len() - nfft) / hop;
    let count = available.min(max_segments);
    let mut acc = vec![0.0; nfft];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for seg in 0..count {
        let start = seg * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = samples[start + i] * window[i];
        }
        fft_in_place(&mut buf, false)?;
        for (a, z) in acc.iter_mut().zip(&buf) {
            *a += z.norm_sqr();
        }
    }
    let norm = 1.0 / (count as f64 * window_power);
    acc.iter_mut().for_each(|a| *a *= norm);
    Ok(fftshift(&acc))
}

pub fn to_db(value: f64, reference: f64) -> f64 {
    if value <= 0.0 || reference <= 0.0 {
        return DB_FLOOR;
    }
    (10.0 * (value / reference).log10()).max(DB_FLOOR)
}

/// Welch PSD in dB relative to its own peak (0 dB), centered. A silent signal
/// reads [`DB_FLOOR`] everywhere.
pub fn psd(signal: &IQSignal, nfft: usize, segments: usize) -> Result<Vec<f64>> {
    let lin = psd_linear(signal.samples(), nfft, segments)?;
    let peak = lin.iter().cloned().fold(0.0, f64::max);
    Ok(lin.iter().map(|&v| to_db(v, peak)).collect())
}

/// Centered frequency axis matching [`psd`]: `(k - n/2)/n`.
pub fn centered_frequencies(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (k as f64 - (n / 2) as f64) / n as f64)
        .collect()
}

/// Writes `freq_normalized,psd_db` rows, ascending from -0.5.
pub fn write_psd_csv<W: Write>(mut out: W, psd_db: &[f64]) -> Result<()> {
    writeln!(out, "freq_normalized,psd_db")?;
    for (f, v) in centered_frequencies(psd_db.len()).iter().zip(psd_db) {
        writeln!(out, "{f},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    // O(n^2) reference transform.
    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    fn tone(freq: f64, n: usize) -> IQSignal {
        let s = (0..n)
            .map(|t| Complex64::from_polar(1.0, 2.0 * PI * freq * t as f64))
            .collect();
        IQSignal::new(s, 1).unwrap()
    }

    #[test]
    fn impulse_and_constant() {
        let imp = IQSignal::new(vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)], 1).unwrap();
        for z in fft(&imp).unwrap().bins() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-15);
        }
        let dc = IQSignal::new(vec![c(1., 0.); 4], 1).unwrap();
        let bins = fft(&dc).unwrap().into_bins();
        assert!((bins[0] - c(4.0, 0.0)).norm() < 1e-15);
        assert!(bins[1..].iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_samples(&mut rng, 256);
        let fast = fft_slice(&x).unwrap();
        let slow = naive_dft(&x);
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        let s = IQSignal::new(vec![c(1., 0.); 6], 1).unwrap();
        assert!(matches!(fft(&s), Err(Error::NotPowerOfTwo(6))));
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&IQSignal::zeros(8, 1).unwrap()), 0.0);
        let s = IQSignal::new(vec![c(1., 0.), c(0., 1.)], 1).unwrap();
        assert_eq!(energy(&s), 2.0);
    }

    #[test]
    fn psd_locates_tone() {
        let s = tone(0.125, 4096);
        let p = psd(&s, 256, 64).unwrap();
        let freqs = centered_frequencies(256);
        let peak = (0..256).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert!((freqs[peak] - 0.125).abs() < 1.0 / 256.0);
        assert_eq!(p[peak], 0.0);
    }

    #[test]
    fn psd_of_silence_is_floored() {
        let p = psd(&IQSignal::zeros(512, 1).unwrap(), 256, 8).unwrap();
        assert!(p.iter().all(|&v| v == DB_FLOOR));
    }

    #[test]
    fn psd_errors() {
        let s = IQSignal::zeros(100, 1).unwrap();
        assert!(psd(&s, 100, 1).is_err());
        assert!(psd(&s, 128, 1).is_err());
    }

    #[test]
    fn oob_tones() {
        let band = BandSpec::new(0.1).unwrap();
        assert!(out_of_band_ratio(&tone(0.0, 128), band).unwrap() < 0.01);
        assert!(out_of_band_ratio(&tone(0.25, 128), band).unwrap() > 0.99);
        assert!(matches!(
            out_of_band_ratio(&IQSignal::zeros(128, 1).unwrap(), band),
            Err(Error::ZeroEnergy)
        ));
    }

    #[test]
    fn band_validation() {
        assert!(BandSpec::new(0.0).is_err());
        assert!(BandSpec::new(0.51).is_err());
        assert!(BandSpec::new(0.5).is_ok());
    }

    #[test]
    fn psd_csv_header_and_axis() {
        let mut out = Vec::new();
        write_psd_csv(&mut out, &[0.0, -3.0, -6.0, -9.0]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "freq_normalized,psd_db");
        assert!(lines[1].starts_with("-0.5,"));
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn rejects_nan_samples() {
        assert!(IQSignal::new(vec![c(f64::NAN, 0.0)], 1).is_err());
    }
}
