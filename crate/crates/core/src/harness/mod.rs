//! Datasets, training loops and evaluation sweeps.

mod config;
mod dataset;
mod eval;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{TrainingConfig, DEFAULT_SNR_RANGE_DB};
pub use dataset::{
    generate_dataset, generate_frame, read_bits_csv, read_frames_csv, write_bits_csv,
    write_frames_csv, Frame,
};
pub use eval::{
    amc_accuracy_by_snr, default_snr_grid, eval_frame_count, evaluate, perturbed_frames,
    psd_compare, psd_for_amn, snr_grid, write_report_csv, EvalOptions, EvalReport, EvalRow,
    PsdTraces, EVAL_EAVESDROPPER_FRAMES, PSD_NFFT, REPORT_HEADER,
};
pub use train::{
    build_amc_train_set, train_amc, train_amc_on, train_amn, train_amn_from, AmcEpochLog,
    AmcTrainSet, AmnEpochLog,
};

/// Independent, reproducible generator for sub-task `stream` of a run seeded with `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream identifiers; each consumer of randomness gets its own.
pub(crate) mod streams {
    pub const DATASET: u64 = 1;
    pub const AMC_INIT: u64 = 2;
    pub const AMC_DATA: u64 = 3;
    pub const AMC_NOISE: u64 = 4;
    pub const AMC_HELDOUT: u64 = 5;
    pub const AMN_INIT: u64 = 6;
    pub const AMN_DATA: u64 = 7;
    pub const AMN_NOISE: u64 = 8;
    pub const EVAL_DATA: u64 = 9;
    pub const PSD_DATA: u64 = 10;
    /// Per-SNR-point streams start here.
    pub const EVAL_SNR_BASE: u64 = 1 << 16;
}
