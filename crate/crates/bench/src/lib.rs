//! Fixtures shared by the kernel benchmarks.

use num_complex::Complex64;
use specdeceive_core::harness::generate_dataset;
use specdeceive_core::nn::{frames_to_tensor, Tensor};
use specdeceive_core::Scheme;

/// `n` shaped QPSK frames from a fixed seed.
pub fn qpsk_frames(n: usize) -> Vec<Vec<Complex64>> {
    generate_dataset(Scheme::Qpsk, n, 0)
        .expect("n > 0")
        .into_iter()
        .map(|f| f.signal.into_samples())
        .collect()
}

/// The same frames packed as a `[n, 2, len]` tensor.
pub fn qpsk_batch(n: usize) -> Tensor {
    let frames = qpsk_frames(n);
    let refs: Vec<&[Complex64]> = frames.iter().map(|f| f.as_slice()).collect();
    frames_to_tensor(&refs).expect("equal-length frames")
}
