use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_specdeceive"));
    c.env_remove("SPECDECEIVE_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny classifier and AMN checkpoints in `dir`.
fn tiny_models(dir: &Path) {
    let o = run(
        &[
            "train-amc",
            "--epochs",
            "1",
            "--frames-per-epoch",
            "8",
            "--seed",
            "3",
            "--out",
            "amc.ckpt",
            "--log",
            "amc_log.csv",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        &[
            "train-amn",
            "--amc",
            "amc.ckpt",
            "--epochs",
            "2",
            "--frames-per-epoch",
            "16",
            "--seed",
            "3",
            "--out",
            "amn.ckpt",
            "--log",
            "amn_log.csv",
            "--loss",
            "huber-fft",
            "--alpha",
            "0.5",
            "--beta",
            "0.2",
            "--gamma",
            "0.3",
            "--delta",
            "1",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gen_data_is_deterministic_and_counts_frames() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(
            &[
                "gen-data", "--scheme", "qpsk", "--frames", "100", "--seed", "7", "--out", out,
            ],
            d.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["frames.csv", "bits.csv", "manifest.json"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"], 100);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["scheme"], "qpsk");
    let bits = fs::read_to_string(d.path().join("a/bits.csv")).unwrap();
    assert_eq!(bits.lines().count(), 101);
}

#[test]
fn seed_comes_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = bin()
        .args([
            "gen-data", "--scheme", "bpsk", "--frames", "3", "--out", "env",
        ])
        .env("SPECDECEIVE_SEED", "7")
        .current_dir(d.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    run(
        &[
            "gen-data", "--scheme", "bpsk", "--frames", "3", "--out", "flag", "--seed", "7",
        ],
        d.path(),
    );
    assert_eq!(
        fs::read(d.path().join("env/frames.csv")).unwrap(),
        fs::read(d.path().join("flag/frames.csv")).unwrap()
    );
}

#[test]
fn unknown_scheme_lists_valid_ones() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["gen-data", "--scheme", "fsk", "--frames", "10"], d.path());
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("bpsk,qpsk,8psk,16qam,64qam"),
        "{}",
        stderr(&o)
    );
    assert!(!d.path().join("data").exists());
}

#[test]
fn weight_sum_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "train-amn",
            "--amc",
            "missing.ckpt",
            "--alpha",
            "0.5",
            "--beta",
            "0.2",
            "--gamma",
            "0.2",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("must equal 1"));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "train-amn",
            "--amc",
            "missing.ckpt",
            "--alpha",
            "0.5",
            "--beta",
            "0.2",
            "--gamma",
            "0.3",
            "--loss",
            "huber-fft",
            "--delta",
            "1",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn config_file_is_schema_checked() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "epochz = 3\n").unwrap();
    let o = run(&["train-amc", "--config", "bad.toml"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    fs::write(
        d.path().join("bad.toml"),
        "alpha = 0.9\nbeta = 0.9\ngamma = 0.0\n",
    )
    .unwrap();
    let o = run(&["train-amn", "--config", "bad.toml"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["train-amc", "--config", "absent.toml"], d.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_code_four() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "train-amc",
            "--epochs",
            "3",
            "--frames-per-epoch",
            "2",
            "--learning-rate",
            "1e300",
            "--out",
            "amc.ckpt",
            "--log",
            "log.csv",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn training_eval_and_psd_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(
        p.join("run.toml"),
        "epochs = 2\nframes_per_epoch = 16\nseed = 3\n",
    )
    .unwrap();
    tiny_models(p);
    let log = fs::read_to_string(p.join("amn_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,loss_total,loss_adv,loss_comm,loss_third")
    );
    assert_eq!(lines.count(), 2);
    let amc_log = fs::read_to_string(p.join("amc_log.csv")).unwrap();
    assert_eq!(amc_log.lines().count(), 2);
    // Config file epochs are honoured and overridden by flags.
    let o = run(
        &[
            "train-amn",
            "--config",
            "run.toml",
            "--amc",
            "amc.ckpt",
            "--out",
            "c.ckpt",
            "--log",
            "c.csv",
            "--epochs",
            "3",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(p.join("c.csv")).unwrap().lines().count(),
        4
    );

    let o = run(
        &[
            "eval",
            "--amn",
            "amn.ckpt",
            "--amc",
            "amc.ckpt",
            "--out",
            "report.csv",
            "--frames",
            "40",
            "--seed",
            "1",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(p.join("report.csv")).unwrap();
    assert!(report.starts_with("snr_db,ber,ber_sigma,acc,mean_ps,spr_db,oob_ratio\n"));
    assert_eq!(report.lines().count(), 12);
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["amn_sha256"].as_str().unwrap().len(), 64);

    let o = run(
        &[
            "eval",
            "--amn",
            "amn.ckpt",
            "--amc",
            "amc.ckpt",
            "--out",
            "r.csv",
            "--snr-step",
            "0",
        ],
        p,
    );
    assert_eq!(code(&o), 2);

    let o = run(
        &[
            "psd", "--amn", "amn.ckpt", "--frames", "16", "--out", "psd.csv",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let psd = fs::read_to_string(p.join("psd.csv")).unwrap();
    assert_eq!(
        psd.lines().next(),
        Some("freq_normalized,clean_db,pert_db,adv_db")
    );
}

#[test]
fn corrupt_checkpoint_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    let o = run(
        &[
            "eval", "--amn", "bad.ckpt", "--amc", "bad.ckpt", "--out", "r.csv",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = run(&["psd", "--amn", "bad.ckpt", "--out", "p.csv"], d.path());
    assert_eq!(code(&o), 3);
    assert!(!d.path().join("r.csv").exists());
}
