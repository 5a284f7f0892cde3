//! JSON experiment config and seed resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttaline::decoder::DecoderConfig;
use ttaline::rescore::RescoreConfig;
use ttaline::tta::AdaptationConfig;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "TTALINE_SEED";

/// Everything a run can take from `--config`. Command-line flags win over
/// fields set here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub adaptation: AdaptationConfig,
    pub decoder: DecoderConfig,
    pub rescore: RescoreConfig,
    /// Corruption ids such as `gaussian_noise-3`; empty means all eight.
    pub corruptions: Vec<String>,
    pub bn_rho: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            corpus: None,
            data_dir: None,
            model_dir: None,
            runs_dir: None,
            out_dir: None,
            adaptation: AdaptationConfig::default(),
            decoder: DecoderConfig::default(),
            rescore: RescoreConfig::default(),
            corruptions: Vec::new(),
            bn_rho: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Flag, then config, then `TTALINE_SEED`.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        resolve_seed(flag, self.seed, std::env::var(SEED_ENV).ok().as_deref())
    }
}

pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Err(CliError::usage(format!(
            "a seed is required: pass --seed, set \"seed\" in the config or export {SEED_ENV}"
        ))),
    }
}

/// First of flag and config value, or a usage error naming the flag.
pub fn require_path(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::usage(format!("missing --{name}")))
}

pub fn require_existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}
