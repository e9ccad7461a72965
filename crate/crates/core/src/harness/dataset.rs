use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;

use super::{seeded_rng, streams};
use crate::error::{Error, Result};
use crate::modem::{modulate, BitVector, PulseShape, Scheme, SYMBOLS_PER_FRAME};
use crate::signal::IQSignal;

/// One noiseless transmitted frame and the bits it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scheme: Scheme,
    pub bits: BitVector,
    pub signal: IQSignal,
}

pub fn generate_frame<R: Rng + ?Sized>(scheme: Scheme, shape: &PulseShape, rng: &mut R) -> Frame {
    let bits = BitVector::random(rng, SYMBOLS_PER_FRAME * scheme.bits_per_symbol());
    let signal = modulate(&bits, scheme.constellation(), shape).expect("non-empty frame");
    Frame {
        scheme,
        bits,
        signal,
    }
}

/// `n_frames` random frames of `scheme`, reproducible from `seed`.
pub fn generate_dataset(scheme: Scheme, n_frames: usize, seed: u64) -> Result<Vec<Frame>> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be positive"));
    }
    let shape = PulseShape::default();
    let mut rng = seeded_rng(seed, streams::DATASET);
    Ok((0..n_frames)
        .map(|_| generate_frame(scheme, &shape, &mut rng))
        .collect())
}

/// Writes `frame,sample,i,q` rows.
pub fn write_frames_csv<W: Write>(mut out: W, frames: &[Frame]) -> Result<()> {
    writeln!(out, "frame,sample,i,q")?;
    for (f, frame) in frames.iter().enumerate() {
        for (t, z) in frame.signal.samples().iter().enumerate() {
            writeln!(out, "{f},{t},{},{}", z.re, z.im)?;
        }
    }
    Ok(())
}

/// Writes `frame,bits` rows with the bits as a `0`/`1` string.
pub fn write_bits_csv<W: Write>(mut out: W, frames: &[Frame]) -> Result<()> {
    writeln!(out, "frame,bits")?;
    for (f, frame) in frames.iter().enumerate() {
        let s: String = frame
            .bits
            .as_slice()
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect();
        writeln!(out, "{f},{s}")?;
    }
    Ok(())
}

fn rows<R: BufRead>(input: R, header: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = input.lines();
    let first = lines.next().transpose()?;
    if first.as_deref().map(str::trim) != Some(header) {
        return Err(Error::Format(format!("expected header `{header}`")));
    }
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if cols.len() != width {
            return Err(Error::Format(format!(
                "line {}: expected {width} columns",
                i + 2
            )));
        }
        out.push(cols);
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse `{s}`")))
}

/// Reads frames written by [`write_frames_csv`]. Frames and samples must be
/// listed in order.
pub fn read_frames_csv<R: BufRead>(input: R) -> Result<Vec<Vec<Complex64>>> {
    let mut frames: Vec<Vec<Complex64>> = Vec::new();
    for cols in rows(input, "frame,sample,i,q")? {
        let (f, t): (usize, usize) = (num(&cols[0])?, num(&cols[1])?);
        if f == frames.len() && t == 0 {
            frames.push(Vec::new());
        }
        let count = frames.len();
        match frames.last_mut() {
            Some(cur) if f + 1 == count && t == cur.len() => {
                cur.push(Complex64::new(num(&cols[2])?, num(&cols[3])?));
            }
            _ => {
                return Err(Error::Format(format!(
                    "out-of-order row frame {f} sample {t}"
                )))
            }
        }
    }
    Ok(frames)
}

pub fn read_bits_csv<R: BufRead>(input: R) -> Result<Vec<BitVector>> {
    rows(input, "frame,bits")?
        .into_iter()
        .enumerate()
        .map(|(i, cols)| {
            if num::<usize>(&cols[0])? != i {
                return Err(Error::Format(format!("out-of-order bits row {i}")));
            }
            let bits = cols[1]
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(Error::Format(format!("invalid bit `{c}`"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            BitVector::new(bits)
        })
        .collect()
}
