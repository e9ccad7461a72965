//! Run configuration file: flat TOML, every key optional, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specdeceive_core::adversary::{DeceptionKind, SpectralMode};
use specdeceive_core::Scheme;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub scheme: Option<Scheme>,
    pub frames_per_epoch: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub snr_range_db: Option<[f64; 2]>,
    pub seed: Option<u64>,
    pub eavesdropper_noise: Option<bool>,
    pub loss: Option<DeceptionKind>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub spectral_mode: Option<SpectralMode>,
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("reading {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}
