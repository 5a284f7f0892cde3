//! Subcommand implementations. Each takes its parsed arguments and returns a
//! [`CliError`](crate::error::CliError) carrying the exit code on failure.

mod ablate;
mod adapt;
mod data;
mod eval;
mod report;
mod train;

use std::path::PathBuf;

use clap::Args;

pub use ablate::{cmd_ablate, AblateArgs, Axis};
pub use adapt::{cmd_adapt, AdaptArgs, AdaptFlags};
pub use data::{cmd_gen_corpus, cmd_gen_data, GenCorpusArgs, GenDataArgs};
pub use eval::{cmd_eval, EvalArgs};
pub use report::{cmd_report, ReportArgs};
pub use train::{cmd_train_source, TrainArgs};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Seed for every random choice; falls back to the config, then TTALINE_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    /// Loads the config and resolves the seed.
    pub fn resolve(&self) -> Result<(ExperimentConfig, u64)> {
        let cfg = ExperimentConfig::load_opt(self.config.as_deref())?;
        let seed = cfg.resolve_seed(self.seed)?;
        Ok((cfg, seed))
    }
}
