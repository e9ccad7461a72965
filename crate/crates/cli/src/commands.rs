use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use specdeceive_core::adversary::{AmcModel, AmnModel, DeceptionKind, LossWeights, SpectralMode};
use specdeceive_core::harness::{
    self, evaluate, generate_dataset, psd_for_amn, snr_grid, write_bits_csv, write_frames_csv,
    write_report_csv, EvalOptions, TrainingConfig,
};
use specdeceive_core::modem::{
    DEFAULT_ROLL_OFF, DEFAULT_SPAN_SYMBOLS, DEFAULT_SPS, FRAME_LEN, SYMBOLS_PER_FRAME,
};
use specdeceive_core::nn::{file_sha256, load_checkpoint, save_checkpoint};
use specdeceive_core::Scheme;

use crate::config::RunConfigFile;
use crate::error::CliError;
use crate::{
    resolve_seed, EvalArgs, GenDataArgs, PsdArgs, TrainAmcArgs, TrainAmnArgs, TrainCommon,
};

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn checkpoint_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!(
            "{what} checkpoint {} not found",
            path.display()
        )))
    }
}

fn dir_or(dir: &Option<PathBuf>, fallback: &str) -> PathBuf {
    dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let file = RunConfigFile::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, file.seed)?;
    if a.frames == 0 {
        return Err(CliError::Validation("--frames must be positive".into()));
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| dir_or(&file.dataset_dir, "data"));
    let frames = generate_dataset(a.scheme, a.frames, seed)?;
    let mut buf = Vec::new();
    write_frames_csv(&mut buf, &frames)?;
    write_file(&out.join("frames.csv"), &buf)?;
    buf.clear();
    write_bits_csv(&mut buf, &frames)?;
    write_file(&out.join("bits.csv"), &buf)?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "scheme": a.scheme,
            "frames": a.frames,
            "seed": seed,
            "samples_per_frame": FRAME_LEN,
            "symbols_per_frame": SYMBOLS_PER_FRAME,
            "bits_per_frame": SYMBOLS_PER_FRAME * a.scheme.bits_per_symbol(),
            "samples_per_symbol": DEFAULT_SPS,
            "roll_off": DEFAULT_ROLL_OFF,
            "span_symbols": DEFAULT_SPAN_SYMBOLS,
            "files": ["frames.csv", "bits.csv"],
        }),
    )?;
    eprintln!(
        "wrote {} {} frames to {}",
        a.frames,
        a.scheme,
        out.display()
    );
    Ok(())
}

/// Layers flags over the config file over the harness defaults.
fn training_config(
    c: &TrainCommon,
    file: &RunConfigFile,
    mut base: TrainingConfig,
) -> Result<TrainingConfig, CliError> {
    base.seed = resolve_seed(c.seed, file.seed)?;
    base.epochs = c.epochs.or(file.epochs).unwrap_or(base.epochs);
    base.frames_per_epoch = c
        .frames_per_epoch
        .or(file.frames_per_epoch)
        .unwrap_or(base.frames_per_epoch);
    base.batch_size = c.batch_size.or(file.batch_size).unwrap_or(base.batch_size);
    base.learning_rate = c
        .learning_rate
        .or(file.learning_rate)
        .unwrap_or(base.learning_rate);
    let [lo, hi] = file.snr_range_db.unwrap_or(base.snr_range_db);
    base.snr_range_db = [c.snr_min.unwrap_or(lo), c.snr_max.unwrap_or(hi)];
    base.eavesdropper_noise = file.eavesdropper_noise.unwrap_or(base.eavesdropper_noise);
    base.validate()?;
    Ok(base)
}

pub fn train_amc(a: &TrainAmcArgs) -> Result<(), CliError> {
    let c = &a.common;
    let file = RunConfigFile::load(c.config.as_deref())?;
    let cfg = training_config(c, &file, TrainingConfig::amc_default(0))?;
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| dir_or(&file.checkpoint_dir, "checkpoints").join("amc.ckpt"));
    let log_path = c
        .log
        .clone()
        .unwrap_or_else(|| dir_or(&file.output_dir, "output").join("amc_log.csv"));
    let (model, logs) = harness::train_amc(&cfg, |l| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  accuracy {:.4}",
            l.epoch, l.loss, l.accuracy
        );
    })?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for l in &logs {
        csv.push_str(&format!("{},{},{}\n", l.epoch, l.loss, l.accuracy));
    }
    write_file(&log_path, csv.as_bytes())?;
    save_checkpoint_at(&out, model.params())?;
    write_json(
        &sidecar(&log_path),
        &json!({
            "command": "train-amc",
            "config": cfg,
            "checkpoint": out,
            "checkpoint_sha256": file_sha256(&out)?,
        }),
    )?;
    eprintln!("saved classifier to {}", out.display());
    Ok(())
}

fn save_checkpoint_at(
    path: &Path,
    params: &specdeceive_core::nn::ParamSet,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(path, params)?;
    Ok(())
}

fn load_amc(path: &Path) -> Result<AmcModel, CliError> {
    checkpoint_exists(path, "classifier")?;
    Ok(AmcModel::from_params(load_checkpoint(path)?)?)
}

fn load_amn(path: &Path) -> Result<AmnModel, CliError> {
    checkpoint_exists(path, "AMN")?;
    Ok(AmnModel::from_checkpoint(load_checkpoint(path)?)?)
}

pub fn train_amn(a: &TrainAmnArgs, mode: Option<SpectralMode>) -> Result<(), CliError> {
    let c = &a.common;
    let file = RunConfigFile::load(c.config.as_deref())?;
    let scheme = a.scheme.or(file.scheme).unwrap_or(Scheme::Qpsk);
    let weights = LossWeights {
        alpha: a.alpha.or(file.alpha).unwrap_or(0.5),
        beta: a.beta.or(file.beta).unwrap_or(0.2),
        gamma: a.gamma.or(file.gamma).unwrap_or(0.3),
        kind: a.loss.or(file.loss).unwrap_or(DeceptionKind::HuberFft),
        delta: a.delta.or(file.delta).unwrap_or(1.0),
        mode: mode.or(file.spectral_mode).unwrap_or_default(),
    };
    weights.validate()?;
    let mut cfg = training_config(c, &file, TrainingConfig::amn_default(scheme, weights, 0))?;
    if a.noiseless_eavesdropper {
        cfg.eavesdropper_noise = false;
    }
    let ckpt_dir = dir_or(&file.checkpoint_dir, "checkpoints");
    let amc_path = a.amc.clone().unwrap_or_else(|| ckpt_dir.join("amc.ckpt"));
    let amc = load_amc(&amc_path)?;
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| ckpt_dir.join(format!("amn_{}.ckpt", scheme.name())));
    let log_path = c
        .log
        .clone()
        .unwrap_or_else(|| dir_or(&file.output_dir, "output").join("amn_log.csv"));

    let (amn, logs) = harness::train_amn(&cfg, &amc, |l| {
        eprintln!(
            "epoch {:>3}  total {:.5}  adv {:.5}  comm {:.6}  third {:.5}",
            l.epoch, l.loss_total, l.loss_adv, l.loss_comm, l.loss_third
        );
    })?;
    let mut csv = String::from("epoch,loss_total,loss_adv,loss_comm,loss_third\n");
    for l in &logs {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch, l.loss_total, l.loss_adv, l.loss_comm, l.loss_third
        ));
    }
    write_file(&log_path, csv.as_bytes())?;
    save_checkpoint_at(&out, &amn.checkpoint())?;
    write_json(
        &sidecar(&log_path),
        &json!({
            "command": "train-amn",
            "config": cfg,
            "amc_checkpoint": amc_path,
            "amc_sha256": file_sha256(&amc_path)?,
            "checkpoint": out,
            "checkpoint_sha256": file_sha256(&out)?,
        }),
    )?;
    eprintln!("saved AMN to {}", out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let grid = snr_grid(a.snr_min, a.snr_max, a.snr_step)?;
    if a.frames == Some(0) {
        return Err(CliError::Validation("--frames must be positive".into()));
    }
    let seed = resolve_seed(a.seed, None)?;
    let amn = load_amn(&a.amn)?;
    let amc = load_amc(&a.amc)?;
    let mut opts = EvalOptions::new(grid.clone(), seed);
    opts.frames = a.frames;
    let report = evaluate(&amn, &amc, &opts)?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &report)?;
    write_file(&a.out, &buf)?;
    write_json(
        &sidecar(&a.out),
        &json!({
            "command": "eval",
            "seed": seed,
            "scheme": report.scheme,
            "snr_grid_db": grid,
            "frames": report.frames,
            "amn_checkpoint": a.amn,
            "amn_sha256": file_sha256(&a.amn)?,
            "amc_checkpoint": a.amc,
            "amc_sha256": file_sha256(&a.amc)?,
        }),
    )?;
    eprintln!("wrote {} rows to {}", report.rows.len(), a.out.display());
    Ok(())
}

pub fn psd(a: &PsdArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed, None)?;
    if a.frames < 2 {
        return Err(CliError::Validation("--frames must be at least 2".into()));
    }
    let amn = load_amn(&a.amn)?;
    let traces = psd_for_amn(&amn, a.frames, seed)?;
    let mut buf = Vec::new();
    traces.write_csv(&mut buf)?;
    write_file(&a.out, &buf)?;
    eprintln!("wrote PSD traces to {}", a.out.display());
    Ok(())
}
