use num_complex::Complex64;
use rand::seq::SliceRandom;

use super::dataset::generate_frame;
use super::{seeded_rng, streams, TrainingConfig};
use crate::adversary::loss::{
    graph_adversarial, graph_communication, graph_power, graph_spectral, CleanSpectra,
};
use crate::adversary::{argmax, AmcModel, AmnModel, DeceptionKind, NUM_CLASSES};
use crate::channel::{awgn_samples, complex_noise, draw_snr};
use crate::error::{Error, Result};
use crate::modem::{demodulate, PulseShape, Scheme};
use crate::nn::{frames_to_tensor, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::signal::{energy_of, IQSignal};

/// Noiseless labelled frames for classifier training.
#[derive(Debug, Clone)]
pub struct AmcTrainSet {
    pub frames: Vec<Vec<Complex64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmcEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-epoch means of the unweighted loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmnEpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_adv: f64,
    pub loss_comm: f64,
    pub loss_third: f64,
}

fn divergence(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence(what),
        other => other,
    }
}

fn adam_for(config: &TrainingConfig, params: &[Tensor]) -> AdamState {
    AdamState::new(
        params,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    )
}

/// Collects parameter gradients; parameters the loss does not reach get zeros.
fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
        })
        .collect()
}

/// `config.frames_per_epoch` frames of every scheme, interleaved by class.
pub fn build_amc_train_set(config: &TrainingConfig) -> Result<AmcTrainSet> {
    config.validate()?;
    let shape = PulseShape::default();
    let mut rng = seeded_rng(config.seed, streams::AMC_DATA);
    let mut set = AmcTrainSet {
        frames: Vec::with_capacity(config.frames_per_epoch * NUM_CLASSES),
        labels: Vec::with_capacity(config.frames_per_epoch * NUM_CLASSES),
    };
    for _ in 0..config.frames_per_epoch {
        for scheme in Scheme::ALL {
            set.frames.push(
                generate_frame(scheme, &shape, &mut rng)
                    .signal
                    .into_samples(),
            );
            set.labels.push(scheme.index());
        }
    }
    Ok(set)
}

/// Trains a fresh classifier on all five schemes with per-frame SNR drawn
/// uniformly from `config.snr_range_db`, redrawn every epoch.
pub fn train_amc(
    config: &TrainingConfig,
    on_epoch: impl FnMut(&AmcEpochLog),
) -> Result<(AmcModel, Vec<AmcEpochLog>)> {
    let set = build_amc_train_set(config)?;
    let model = AmcModel::new(&mut seeded_rng(config.seed, streams::AMC_INIT));
    train_amc_on(config, &set, model, on_epoch)
}

pub fn train_amc_on(
    config: &TrainingConfig,
    set: &AmcTrainSet,
    mut model: AmcModel,
    mut on_epoch: impl FnMut(&AmcEpochLog),
) -> Result<(AmcModel, Vec<AmcEpochLog>)> {
    config.validate()?;
    if set.frames.is_empty() || set.frames.len() != set.labels.len() {
        return Err(Error::invalid("training set is empty or mislabelled"));
    }
    let [lo, hi] = config.snr_range_db;
    let mut rng = seeded_rng(config.seed, streams::AMC_NOISE);
    let mut adam = adam_for(config, &model.params().tensors());
    let mut order: Vec<usize> = (0..set.frames.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let noisy = batch
                .iter()
                .map(|&i| {
                    let snr = draw_snr(&mut rng, lo, hi)?;
                    awgn_samples(&set.frames[i], snr, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| set.labels[i]).collect();
            let refs: Vec<&[Complex64]> = noisy.iter().map(|f| f.as_slice()).collect();

            let mut g = Graph::new();
            let x = g.input(frames_to_tensor(&refs)?)?;
            let (probs, vars) = model
                .forward(&mut g, x, true, Some(&mut rng))
                .map_err(divergence)?;
            let loss = g.cross_entropy(probs, &labels).map_err(divergence)?;
            g.backward(loss).map_err(divergence)?;

            loss_sum += g.value(loss).item() * batch.len() as f64;
            correct += g
                .value(probs)
                .data()
                .chunks(NUM_CLASSES)
                .zip(&labels)
                .filter(|(p, &l)| argmax(p) == l)
                .count();
            step(&mut adam, model.params_mut(), &collect_grads(&g, &vars))?;
        }
        let log = AmcEpochLog {
            epoch,
            loss: loss_sum / set.frames.len() as f64,
            accuracy: correct as f64 / set.frames.len() as f64,
        };
        if !log.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "epoch {epoch} loss {}",
                log.loss
            )));
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

fn step(adam: &mut AdamState, params: &mut crate::nn::ParamSet, grads: &[Tensor]) -> Result<()> {
    let mut tensors = params.tensors();
    adam.step(&mut tensors, grads).map_err(divergence)?;
    if tensors.iter().any(|t| !t.is_finite()) {
        return Err(Error::Divergence(
            "non-finite parameter after update".into(),
        ));
    }
    params.set_tensors(tensors)?;
    params.round_to_f32();
    Ok(())
}

/// Trains a fresh AMN for `config.scheme` against the frozen classifier `amc`.
pub fn train_amn(
    config: &TrainingConfig,
    amc: &AmcModel,
    on_epoch: impl FnMut(&AmnEpochLog),
) -> Result<(AmnModel, Vec<AmnEpochLog>)> {
    let amn = AmnModel::new(
        config.scheme,
        &mut seeded_rng(config.seed, streams::AMN_INIT),
    );
    train_amn_from(config, amc, amn, on_epoch)
}

/// One optimizer step per batch on
/// `alpha * L_adv + beta * L_comm + gamma * L_third`.
pub fn train_amn_from(
    config: &TrainingConfig,
    amc: &AmcModel,
    mut amn: AmnModel,
    mut on_epoch: impl FnMut(&AmnEpochLog),
) -> Result<(AmnModel, Vec<AmnEpochLog>)> {
    config.validate()?;
    if amn.scheme() != config.scheme {
        return Err(Error::invalid(format!(
            "AMN targets {} but the config trains {}",
            amn.scheme(),
            config.scheme
        )));
    }
    let frozen = amc.params().checksum();
    let w = config.weights;
    let scheme = config.scheme;
    let shape = PulseShape::default();
    let [lo, hi] = config.snr_range_db;
    let mut data_rng = seeded_rng(config.seed, streams::AMN_DATA);
    let mut noise_rng = seeded_rng(config.seed, streams::AMN_NOISE);
    let mut adam = adam_for(config, &amn.params().tensors());
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 4];
        let mut remaining = config.frames_per_epoch;
        while remaining > 0 {
            let bsz = remaining.min(config.batch_size);
            remaining -= bsz;
            let frames: Vec<_> = (0..bsz)
                .map(|_| generate_frame(scheme, &shape, &mut data_rng))
                .collect();
            let refs: Vec<&[Complex64]> = frames.iter().map(|f| f.signal.samples()).collect();

            let mut g = Graph::new();
            let x = g.input(frames_to_tensor(&refs)?)?;
            let (p, vars) = amn.forward(&mut g, x, true).map_err(divergence)?;
            let adv = g.add(x, p)?;
            let n = refs[0].len();
            let adv_frames: Vec<Vec<Complex64>> = (0..bsz)
                .map(|b| crate::nn::tensor_frame(g.value(adv), b))
                .collect();

            // Eavesdropper: optional independent AWGN, frozen classifier.
            let eav_in = if config.eavesdropper_noise {
                let mut noise = Vec::with_capacity(bsz * 2 * n);
                for f in &adv_frames {
                    let snr = draw_snr(&mut noise_rng, lo, hi)?;
                    let power = energy_of(f) / n as f64;
                    let z = complex_noise(&mut noise_rng, n, power / 10f64.powf(snr / 10.0));
                    noise.extend(z.iter().map(|c| c.re));
                    noise.extend(z.iter().map(|c| c.im));
                }
                let noise = Tensor::new(vec![bsz, 2, n], noise)?;
                if w.alpha > 0.0 {
                    g.add_const(adv, &noise)?
                } else {
                    let detached = g.value(adv).clone();
                    let d = g.input(detached)?;
                    g.add_const(d, &noise)?
                }
            } else if w.alpha > 0.0 {
                adv
            } else {
                let detached = g.value(adv).clone();
                g.input(detached)?
            };
            let (probs, _) = amc
                .forward(&mut g, eav_in, false, None)
                .map_err(divergence)?;
            let l_adv = graph_adversarial(&mut g, probs, &vec![scheme.index(); bsz])?;

            // Receiver: AWGN, demodulate, per-batch BER scales the EVM term.
            let mut errors = 0usize;
            let mut bits = 0usize;
            for (f, clean) in adv_frames.iter().zip(&frames) {
                let snr = draw_snr(&mut noise_rng, lo, hi)?;
                let rx = IQSignal::new(awgn_samples(f, snr, &mut noise_rng)?, shape.sps())?;
                errors += demodulate(&rx, scheme.constellation(), &shape)?.hamming(&clean.bits)?;
                bits += clean.bits.len();
            }
            let b_r = errors as f64 / bits as f64;
            let l_comm = graph_communication(&mut g, b_r, x, adv, &shape).map_err(divergence)?;

            let l_third = match w.kind {
                DeceptionKind::Power => {
                    let es: Vec<f64> = refs.iter().map(|f| energy_of(f)).collect();
                    graph_power(&mut g, p, &es)
                }
                kind => {
                    let spectra = CleanSpectra::new(&refs)?;
                    graph_spectral(&mut g, p, &spectra, kind, w.delta, w.mode)
                }
            }
            .map_err(divergence)?;

            let a = g.scale(l_adv, w.alpha)?;
            let c = g.scale(l_comm, w.beta)?;
            let t = g.scale(l_third, w.gamma)?;
            let ac = g.add(a, c)?;
            let total = g.add(ac, t)?;
            g.backward(total).map_err(divergence)?;

            let weight = bsz as f64;
            for (s, v) in sums.iter_mut().zip([total, l_adv, l_comm, l_third]) {
                *s += g.value(v).item() * weight;
            }
            step(&mut adam, amn.params_mut(), &collect_grads(&g, &vars))?;
        }
        let m = config.frames_per_epoch as f64;
        let log = AmnEpochLog {
            epoch,
            loss_total: sums[0] / m,
            loss_adv: sums[1] / m,
            loss_comm: sums[2] / m,
            loss_third: sums[3] / m,
        };
        if !log.loss_total.is_finite() {
            return Err(Error::Divergence(format!(
                "epoch {epoch} loss {}",
                log.loss_total
            )));
        }
        on_epoch(&log);
        logs.push(log);
    }
    if amc.params().checksum() != frozen {
        return Err(Error::invalid(
            "classifier parameters changed during AMN training",
        ));
    }
    Ok((amn, logs))
}
