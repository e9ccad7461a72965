use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use super::{dataset::generate_frame, seeded_rng, streams};
use crate::adversary::{argmax, AmcModel, AmnModel, LossWeights};
use crate::channel::{awgn_samples, draw_snr};
use crate::error::{Error, Result};
use crate::modem::{demodulate, BitVector, PulseShape, Scheme, SYMBOLS_PER_FRAME};
use crate::signal::{
    band_energy_split, centered_frequencies, energy_of, psd_linear, to_db, BandSpec, IQSignal,
};

pub const REPORT_HEADER: &str = "snr_db,ber,ber_sigma,acc,mean_ps,spr_db,oob_ratio";
pub const EVAL_EAVESDROPPER_FRAMES: usize = 1000;
pub const PSD_NFFT: usize = 256;
const MIN_EVAL_BITS: usize = 100_000;
const MIN_EVAL_FRAMES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Sorted ascending before use.
    pub snr_grid: Vec<f64>,
    pub seed: u64,
    /// Overrides [`eval_frame_count`].
    pub frames: Option<usize>,
    pub eavesdropper_frames: usize,
    /// Recorded in the report only.
    pub weights: Option<LossWeights>,
}

impl EvalOptions {
    pub fn new(snr_grid: Vec<f64>, seed: u64) -> Self {
        Self {
            snr_grid,
            seed,
            frames: None,
            eavesdropper_frames: EVAL_EAVESDROPPER_FRAMES,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub ber: f64,
    /// Binomial standard error `sqrt(ber (1 - ber) / bits)`.
    pub ber_sigma: f64,
    pub bits: usize,
    /// Eavesdropper accuracy on the true scheme.
    pub acc: f64,
    pub mean_ps: f64,
    /// `10 log10(E_s / E_p)`; infinite for a zero perturbation.
    pub spr_db: f64,
    /// Out-of-band share of the perturbation energy; 0 for a zero perturbation.
    pub oob_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub frames: usize,
    pub weights: Option<LossWeights>,
    pub rows: Vec<EvalRow>,
}

/// `min, min + step, ..., <= max`.
pub fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || step <= 0.0 || min > max {
        return Err(Error::invalid(format!(
            "invalid SNR grid min {min} max {max} step {step}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + i as f64 * step).collect())
}

/// 0 to 20 dB in 2 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    snr_grid(0.0, 20.0, 2.0).unwrap()
}

/// Frames needed for at least 1000 frames and 10^5 bits.
pub fn eval_frame_count(scheme: Scheme) -> usize {
    let bits = SYMBOLS_PER_FRAME * scheme.bits_per_symbol();
    MIN_EVAL_FRAMES.max(MIN_EVAL_BITS.div_ceil(bits))
}

fn snr_stream(snr_db: f64) -> u64 {
    streams::EVAL_SNR_BASE.wrapping_add(snr_db.to_bits())
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty SNR grid"));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite SNR in grid"));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Runs `f` on every grid point, in parallel where the host allows; results keep grid order.
fn per_point<T: Send>(grid: &[f64], f: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    if workers <= 1 {
        return grid.iter().map(|&s| f(s)).collect();
    }
    let mut out = Vec::with_capacity(grid.len());
    for chunk in grid.chunks(workers) {
        let results: Vec<Result<T>> = std::thread::scope(|scope| {
            let f = &f;
            let handles: Vec<_> = chunk.iter().map(|&s| scope.spawn(move || f(s))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Monte-Carlo BER and eavesdropper metrics of `amn` against `amc` over the grid.
/// Perturbations are computed once on noiseless frames and reused at every SNR;
/// each SNR point draws its noise from its own stream.
pub fn evaluate(amn: &AmnModel, amc: &AmcModel, opts: &EvalOptions) -> Result<EvalReport> {
    let grid = sorted_grid(&opts.snr_grid)?;
    let scheme = amn.scheme();
    let n_frames = opts.frames.unwrap_or_else(|| eval_frame_count(scheme));
    if n_frames == 0 {
        return Err(Error::invalid("evaluation needs at least one frame"));
    }
    let shape = PulseShape::default();
    let mut rng = seeded_rng(opts.seed, streams::EVAL_DATA);
    let frames: Vec<_> = (0..n_frames)
        .map(|_| generate_frame(scheme, &shape, &mut rng))
        .collect();
    let refs: Vec<&[Complex64]> = frames.iter().map(|f| f.signal.samples()).collect();
    let perts = amn.perturb(&refs)?;
    let adv: Vec<Vec<Complex64>> = refs
        .iter()
        .zip(&perts)
        .map(|(x, p)| x.iter().zip(p).map(|(a, b)| a + b).collect())
        .collect();

    let band = BandSpec::occupied(shape.roll_off(), shape.sps())?;
    let es: f64 = refs.iter().map(|f| energy_of(f)).sum();
    let (mut p_in, mut p_out) = (0.0, 0.0);
    for p in &perts {
        // Unnormalized DFT energies carry a factor of the transform length.
        let n = p.len().next_power_of_two() as f64;
        let (i, o) = band_energy_split(p, band)?;
        p_in += i / n;
        p_out += o / n;
    }
    let ep = p_in + p_out;
    let spr_db = if ep > 0.0 {
        10.0 * (es / ep).log10()
    } else {
        f64::INFINITY
    };
    let oob_ratio = if ep > 0.0 { p_out / ep } else { 0.0 };
    let n_eav = opts.eavesdropper_frames.min(n_frames);
    let label = scheme.index();

    let rows = per_point(&grid, |snr| {
        let mut rng = seeded_rng(opts.seed, snr_stream(snr));
        let (mut errors, mut bits) = (0usize, 0usize);
        let mut noisy_eav = Vec::with_capacity(n_eav);
        for (i, (a, f)) in adv.iter().zip(&frames).enumerate() {
            let rx = awgn_samples(a, snr, &mut rng)?;
            let rx_bits: BitVector = demodulate(
                &IQSignal::new(rx.clone(), shape.sps())?,
                scheme.constellation(),
                &shape,
            )?;
            errors += rx_bits.hamming(&f.bits)?;
            bits += f.bits.len();
            if i < n_eav {
                noisy_eav.push(rx);
            }
        }
        let eav_refs: Vec<&[Complex64]> = noisy_eav.iter().map(|f| f.as_slice()).collect();
        let probs = amc.predict(&eav_refs)?;
        let acc = probs.iter().filter(|p| argmax(&p[..]) == label).count() as f64 / n_eav as f64;
        let mean_ps = probs.iter().map(|p| p[label]).sum::<f64>() / n_eav as f64;
        let ber = errors as f64 / bits as f64;
        Ok(EvalRow {
            snr_db: snr,
            ber,
            ber_sigma: (ber * (1.0 - ber) / bits as f64).sqrt(),
            bits,
            acc,
            mean_ps,
            spr_db,
            oob_ratio,
        })
    })?;
    Ok(EvalReport {
        scheme,
        seed: opts.seed,
        frames: n_frames,
        weights: opts.weights,
        rows,
    })
}

pub fn write_report_csv<W: Write>(mut out: W, report: &EvalReport) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.snr_db, r.ber, r.ber_sigma, r.acc, r.mean_ps, r.spr_db, r.oob_ratio
        )?;
    }
    Ok(())
}

/// Held-out classifier accuracy per SNR over `frames_per_scheme` frames of each of `schemes`.
pub fn amc_accuracy_by_snr(
    amc: &AmcModel,
    schemes: &[Scheme],
    snr_grid: &[f64],
    frames_per_scheme: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let grid = sorted_grid(snr_grid)?;
    if schemes.is_empty() || frames_per_scheme == 0 {
        return Err(Error::invalid("no held-out frames"));
    }
    let shape = PulseShape::default();
    let mut rng = seeded_rng(seed, streams::AMC_HELDOUT);
    let mut clean = Vec::new();
    for &s in schemes {
        for _ in 0..frames_per_scheme {
            clean.push((
                generate_frame(s, &shape, &mut rng).signal.into_samples(),
                s.index(),
            ));
        }
    }
    per_point(&grid, |snr| {
        let mut rng = seeded_rng(seed, snr_stream(snr) ^ streams::AMC_HELDOUT);
        let noisy = clean
            .iter()
            .map(|(f, _)| {
                let s = draw_snr(&mut rng, snr, snr)?;
                awgn_samples(f, s, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[Complex64]> = noisy.iter().map(|f| f.as_slice()).collect();
        let probs = amc.predict(&refs)?;
        let correct = probs
            .iter()
            .zip(&clean)
            .filter(|(p, (_, l))| argmax(&p[..]) == *l)
            .count();
        Ok((snr, correct as f64 / clean.len() as f64))
    })
}

/// Three Welch PSD traces on a shared centered axis, in dB relative to the clean peak.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdTraces {
    pub freq: Vec<f64>,
    pub clean_db: Vec<f64>,
    pub pert_db: Vec<f64>,
    pub adv_db: Vec<f64>,
}

impl PsdTraces {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "freq_normalized,clean_db,pert_db,adv_db")?;
        for i in 0..self.freq.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.freq[i], self.clean_db[i], self.pert_db[i], self.adv_db[i]
            )?;
        }
        Ok(())
    }
}

fn concat(frames: &[IQSignal]) -> Vec<Complex64> {
    frames
        .iter()
        .flat_map(|f| f.samples().iter().copied())
        .collect()
}

/// PSDs of the concatenated clean, perturbation and adversarial frames.
pub fn psd_compare(
    clean: &[IQSignal],
    perturbation: &[IQSignal],
    adversarial: &[IQSignal],
) -> Result<PsdTraces> {
    for other in [perturbation, adversarial] {
        if other.len() != clean.len() {
            return Err(Error::LengthMismatch {
                expected: clean.len(),
                actual: other.len(),
            });
        }
        for (a, b) in clean.iter().zip(other) {
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
        }
    }
    let lin = |f: &[IQSignal]| psd_linear(&concat(f), PSD_NFFT, usize::MAX);
    let (c, p, a) = (lin(clean)?, lin(perturbation)?, lin(adversarial)?);
    let peak = c.iter().cloned().fold(0.0, f64::max);
    let db = |v: &[f64]| v.iter().map(|&x| to_db(x, peak)).collect::<Vec<_>>();
    Ok(PsdTraces {
        freq: centered_frequencies(PSD_NFFT),
        clean_db: db(&c),
        pert_db: db(&p),
        adv_db: db(&a),
    })
}

/// Clean, perturbation and adversarial frames of `amn`'s scheme.
pub fn perturbed_frames(
    amn: &AmnModel,
    n_frames: usize,
    seed: u64,
) -> Result<(Vec<IQSignal>, Vec<IQSignal>, Vec<IQSignal>)> {
    if n_frames == 0 {
        return Err(Error::invalid("at least one frame is required"));
    }
    let shape = PulseShape::default();
    let mut rng = seeded_rng(seed, streams::PSD_DATA);
    let clean: Vec<IQSignal> = (0..n_frames)
        .map(|_| generate_frame(amn.scheme(), &shape, &mut rng).signal)
        .collect();
    let refs: Vec<&[Complex64]> = clean.iter().map(|f| f.samples()).collect();
    let mut pert = Vec::with_capacity(n_frames);
    let mut adv = Vec::with_capacity(n_frames);
    for (c, p) in clean.iter().zip(amn.perturb(&refs)?) {
        let p = IQSignal::new(p, shape.sps())?;
        adv.push(c.add(&p)?);
        pert.push(p);
    }
    Ok((clean, pert, adv))
}

/// [`psd_compare`] over `n_frames` fresh frames perturbed by `amn`.
pub fn psd_for_amn(amn: &AmnModel, n_frames: usize, seed: u64) -> Result<PsdTraces> {
    let (clean, pert, adv) = perturbed_frames(amn, n_frames, seed)?;
    psd_compare(&clean, &pert, &adv)
}
