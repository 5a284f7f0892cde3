use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ttaline::data::{load_pages, mix_seed};
use ttaline::lm::{CharNGramModel, WordNGramModel, DEFAULT_CHAR_ORDER, DEFAULT_WORD_ORDER};
use ttaline::optical::{train_source, Checkpoint, InputScaling, OpticalConfig, OpticalModel, TrainConfig};
use ttaline::textcore::Vocabulary;

use super::Common;
use crate::config::require_path;
use crate::error::{CliError, Result};
use crate::layout::{
    csv_writer, train_dir, DataIndex, CHAR_LM_FILE, CHECKPOINT_FILE, LM_CORPUS_FILE, LOSS_FILE, VOCAB_FILE,
    WORD_LM_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scaling {
    Global,
    PerLine,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Data directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Gradient-norm clipping threshold; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = ttaline::optical::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = Scaling::PerLine)]
    pub scaling: Scaling,
    #[arg(long, default_value_t = DEFAULT_CHAR_ORDER)]
    pub char_order: usize,
    #[arg(long, default_value_t = DEFAULT_WORD_ORDER)]
    pub word_order: usize,
}

pub fn cmd_train_source(args: &TrainArgs) -> Result<()> {
    let (cfg, seed) = args.common.resolve()?;
    let data = require_path(args.data.clone(), &cfg.data_dir, "data")?;
    let out = require_path(args.out.clone(), &cfg.model_dir, "out")?;
    DataIndex::load(&data)?;
    if args.epochs == 0 || args.batch_size == 0 || args.hidden == 0 || !(args.lr >= 0.0) {
        return Err(CliError::usage("epochs, batch size and hidden size must be positive, lr nonnegative"));
    }

    let lm_text = std::fs::read_to_string(data.join(LM_CORPUS_FILE))?;
    let lm_lines: Vec<&str> = lm_text.lines().filter(|l| !l.is_empty()).collect();
    let pages = load_pages(&train_dir(&data))?;
    let vocab = Vocabulary::from_corpus(
        lm_lines
            .iter()
            .copied()
            .chain(pages.iter().flat_map(|p| p.lines.iter().map(|l| l.text.as_str()))),
    )?;

    let mut dataset = Vec::new();
    for page in &pages {
        for line in &page.lines {
            match vocab.encode(&line.text) {
                Ok(label) => dataset.push((line.image.clone(), label)),
                Err(e) => log::warn!("skipping a line of {}: {e}", page.page_id),
            }
        }
    }
    let mut ocfg = OpticalConfig::new(vocab.num_classes());
    ocfg.hidden = args.hidden;
    ocfg.scaling = match args.scaling {
        Scaling::Global => InputScaling::Global,
        Scaling::PerLine => InputScaling::PerLine,
    };
    let mut model = OpticalModel::new(ocfg, mix_seed(seed, 1))?;
    let tcfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        clip_norm: (args.clip_norm > 0.0).then_some(args.clip_norm),
        seed: mix_seed(seed, 2),
    };
    log::info!("training on {} lines for {} epochs", dataset.len(), args.epochs);
    let report = train_source(&mut model, &dataset, &tcfg)?;
    for &i in &report.skipped {
        log::warn!("skipped training line {i}: transcript does not fit its image");
    }

    std::fs::create_dir_all(&out)?;
    let meta = format!(
        "seed={seed} epochs={} lr={} momentum={} batch={} lines={}",
        args.epochs,
        args.lr,
        args.momentum,
        args.batch_size,
        dataset.len()
    );
    Checkpoint::new(&model, &vocab, meta).save(&out.join(CHECKPOINT_FILE))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    CharNGramModel::train(&lm_lines, args.char_order)?.save(&out.join(CHAR_LM_FILE))?;
    WordNGramModel::train(&lm_lines, args.word_order)?.save(&out.join(WORD_LM_FILE))?;

    let mut w = csv_writer(&out.join(LOSS_FILE))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in report.loss_curve.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:.6}")])?;
    }
    w.flush()?;

    let per_epoch = dataset.len().div_ceil(args.batch_size).max(1);
    let curve = &report.loss_curve;
    let head = &curve[..per_epoch.min(curve.len())];
    let tail = &curve[curve.len().saturating_sub(per_epoch)..];
    println!(
        "trained {} lines ({} skipped); mean loss first epoch {:.4}, last epoch {:.4}",
        dataset.len() - report.skipped.len(),
        report.skipped.len(),
        crate::eval::mean(head),
        crate::eval::mean(tail)
    );
    Ok(())
}
