use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specdeceive_core::adversary::loss::{loss_adversarial, spectral_loss};
use specdeceive_core::adversary::{DeceptionKind, SpectralMode};
use specdeceive_core::modem::{demodulate, evm, modulate, BitVector, PulseShape, Scheme};
use specdeceive_core::signal::{energy_of, fft_slice, ifft_slice, psd_linear};
use specdeceive_core::IQSignal;

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn pow2_vec() -> impl Strategy<Value = Vec<Complex64>> {
    (0u32..9).prop_flat_map(|e| complex_vec(1 << e))
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

proptest! {
    #[test]
    fn parseval(x in pow2_vec()) {
        let s = fft_slice(&x).unwrap();
        let lhs = energy_of(&x);
        let rhs = energy_of(&s) / x.len() as f64;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
    }

    #[test]
    fn fft_round_trip(x in pow2_vec()) {
        let back = ifft_slice(&fft_slice(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn fft_linearity(x in complex_vec(64), y in complex_vec(64), a in -3.0f64..3.0) {
        let combo: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| p * a + q).collect();
        let lhs = fft_slice(&combo).unwrap();
        let (fx, fy) = (fft_slice(&x).unwrap(), fft_slice(&y).unwrap());
        for k in 0..64 {
            prop_assert!((lhs[k] - (fx[k] * a + fy[k])).norm() < 1e-8);
        }
    }

    #[test]
    fn noiseless_modem_round_trip(s in scheme(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = BitVector::random(&mut rng, 16 * s.bits_per_symbol());
        let shape = PulseShape::default();
        let x = modulate(&bits, s.constellation(), &shape).unwrap();
        prop_assert_eq!(demodulate(&x, s.constellation(), &shape).unwrap(), bits);
    }

    #[test]
    fn evm_is_homogeneous(seed in any::<u64>(), k in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = PulseShape::default();
        let c = Scheme::Qpsk.constellation();
        let x = modulate(&BitVector::random(&mut rng, 32), c, &shape).unwrap();
        let p = modulate(&BitVector::random(&mut rng, 32), c, &shape).unwrap();
        let e1 = evm(&x, &x.add(&p).unwrap(), &shape).unwrap();
        let ek = evm(&x, &x.add(&p.scale(k)).unwrap(), &shape).unwrap();
        prop_assert!((ek - k * e1).abs() < 1e-9 * (1.0 + ek));
    }

    #[test]
    fn deception_losses_bounded(x in complex_vec(128), p in complex_vec(128), huber in any::<bool>(), complex in any::<bool>()) {
        prop_assume!(energy_of(&x) > 0.0);
        let xs = IQSignal::new(x, 8).unwrap();
        let ps = IQSignal::new(p, 8).unwrap();
        let kind = if huber { DeceptionKind::HuberFft } else { DeceptionKind::MseFft };
        let mode = if complex { SpectralMode::Complex } else { SpectralMode::Magnitude };
        let l = spectral_loss(&xs, &ps, kind, 1.0, mode).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn adversarial_loss_non_negative(ps in 0.0f64..=1.0) {
        let l = loss_adversarial(ps);
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}

#[test]
fn white_noise_psd_is_flat_at_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = specdeceive_core::channel::complex_noise(&mut rng, 1 << 16, 2.5);
    let p = psd_linear(&x, 64, usize::MAX).unwrap();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    assert!((mean - 2.5).abs() < 0.05, "mean level {mean}");
    assert!(p.iter().all(|&v| (v - 2.5).abs() < 0.5), "{p:?}");
}
