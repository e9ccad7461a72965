//! Training-level properties at reduced scale. One classifier is shared by all tests.

use std::sync::OnceLock;

use specdeceive_core::adversary::{AmcModel, DeceptionKind, LossWeights};
use specdeceive_core::harness::{
    amc_accuracy_by_snr, evaluate, train_amc, train_amn, AmcEpochLog, EvalOptions, EvalReport,
    TrainingConfig,
};
use specdeceive_core::Scheme;

struct Shared {
    model: AmcModel,
    logs: Vec<AmcEpochLog>,
}

fn classifier() -> &'static Shared {
    static AMC: OnceLock<Shared> = OnceLock::new();
    AMC.get_or_init(|| {
        let mut c = TrainingConfig::amc_default(21);
        c.frames_per_epoch = 500;
        c.epochs = 10;
        let (model, logs) = train_amc(&c, |_| {}).unwrap();
        Shared { model, logs }
    })
}

fn attack(alpha: f64, beta: f64, gamma: f64) -> EvalReport {
    let amc = &classifier().model;
    let w = LossWeights::new(alpha, beta, gamma, DeceptionKind::Power, 1.0).unwrap();
    let mut c = TrainingConfig::amn_default(Scheme::Qpsk, w, 22);
    c.frames_per_epoch = 640;
    c.epochs = 10;
    let (amn, _) = train_amn(&c, amc, |_| {}).unwrap();
    let mut opts = EvalOptions::new(vec![0.0, 10.0, 20.0], 23);
    opts.frames = Some(400);
    opts.eavesdropper_frames = 400;
    evaluate(&amn, amc, &opts).unwrap()
}

#[test]
fn classifier_loss_falls_in_moving_average() {
    let losses: Vec<f64> = classifier().logs.iter().map(|l| l.loss).collect();
    let ma: Vec<f64> = losses
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect();
    assert!(ma.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn classifier_prefers_high_snr() {
    let acc =
        amc_accuracy_by_snr(&classifier().model, &Scheme::ALL, &[0.0, 20.0], 300, 24).unwrap();
    assert!(acc[1].1 > acc[0].1, "{acc:?}");
    assert!(acc[1].1 > 0.5, "{acc:?}");
}

#[test]
fn evasion_only_defeats_the_classifier() {
    let r = attack(1.0, 0.0, 0.0);
    assert!(r.rows.iter().all(|row| row.acc < 0.2), "{:?}", r.rows);
}

#[test]
fn power_only_shrinks_the_perturbation() {
    let r = attack(0.0, 0.0, 1.0);
    // E_p / E_s < 0.01 is an SPR above 20 dB.
    assert!(r.rows[0].spr_db > 20.0, "{}", r.rows[0].spr_db);
}

#[test]
fn evaluation_is_deterministic() {
    let amc = &classifier().model;
    let amn = specdeceive_core::adversary::AmnModel::new(
        Scheme::Qpsk,
        &mut specdeceive_core::harness::seeded_rng(1, 1),
    );
    let mut opts = EvalOptions::new(vec![0.0, 4.0], 25);
    opts.frames = Some(100);
    let a = evaluate(&amn, amc, &opts).unwrap();
    let b = evaluate(&amn, amc, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2);
    assert!(a
        .rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.ber) && (0.0..=1.0).contains(&r.acc)));
}
