use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ttaline::tta::ConfidenceKind;

use super::Common;
use crate::config::{require_path, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::eval::score;
use crate::layout::{load_test_set, trace_path, write_json, DataIndex, TIMING_FILE};
use crate::run::{run_set, Method, Resources, RunSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfidenceArg {
    AugmentationNed,
    NormalizedCtcLoss,
}

/// Overrides applied on top of the config's adaptation, decoder and re-scoring settings.
#[derive(Debug, Clone, Default, Args)]
pub struct AdaptFlags {
    /// Number of adaptation iterations K.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Produce self-labels by greedy decoding instead of the LM-fused beam search.
    #[arg(long)]
    pub no_lm_in_loop: bool,
    /// Compute self-labels and confidences once, before the first update.
    #[arg(long)]
    pub freeze_self_labels: bool,
    #[arg(long, value_enum)]
    pub confidence_kind: Option<ConfidenceArg>,
    /// Train on all lines at every iteration.
    #[arg(long)]
    pub no_progressive: bool,
    /// Give every selected line weight 1.
    #[arg(long)]
    pub no_reweight: bool,
    #[arg(long)]
    pub divergence_threshold: Option<f64>,
    /// Weight of the page statistics for the bn method.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Character LM weight in the decoder.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Weight of the word LM when re-scoring the top-k.
    #[arg(long)]
    pub rescore_weight: Option<f64>,
    /// Emit the decoder top-1 without re-scoring.
    #[arg(long)]
    pub no_rescore: bool,
    /// Do not record per-line confidences (faster).
    #[arg(long)]
    pub skip_confidence: bool,
}

impl AdaptFlags {
    pub fn spec(&self, cfg: &ExperimentConfig, method: Method) -> Result<RunSpec> {
        let mut s = RunSpec::new(method);
        s.adaptation = cfg.adaptation;
        s.decoder = cfg.decoder;
        s.rescore = cfg.rescore;
        s.bn_rho = cfg.bn_rho;
        let a = &mut s.adaptation;
        if let Some(k) = self.iters {
            a.iterations = k;
        }
        if let Some(lr) = self.lr {
            a.learning_rate = lr;
        }
        if let Some(t) = self.divergence_threshold {
            a.divergence_threshold = t;
        }
        a.lm_in_loop &= !self.no_lm_in_loop;
        a.freeze_self_labels |= self.freeze_self_labels;
        a.progressive &= !self.no_progressive;
        a.reweight &= !self.no_reweight;
        if let Some(c) = self.confidence_kind {
            a.confidence_kind = match c {
                ConfidenceArg::AugmentationNed => ConfidenceKind::AugmentationNed,
                ConfidenceArg::NormalizedCtcLoss => ConfidenceKind::NormalizedCtcLoss,
            };
        }
        if let Some(r) = self.rho {
            s.bn_rho = r;
        }
        if let Some(al) = self.alpha {
            s.decoder.alpha = al;
        }
        if let Some(b) = self.beam_width {
            s.decoder.beam_width = b;
        }
        if let Some(w) = self.rescore_weight {
            s.rescore.w = w;
        }
        s.rescore.enabled &= !self.no_rescore;
        s.confidence = !self.skip_confidence;
        s.adaptation.validate()?;
        s.decoder.validate().map_err(CliError::Usage)?;
        if !(0.0..=1.0).contains(&s.bn_rho) {
            return Err(CliError::usage(format!("rho must lie in [0,1], got {}", s.bn_rho)));
        }
        if !(s.rescore.w >= 0.0) {
            return Err(CliError::usage("rescore weight must be nonnegative"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model directory written by train-source.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Data directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Runs directory; outputs go to <out>/<method>/<set>.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Ours)]
    pub method: Method,
    /// Skip adaptation: plain source-model inference.
    #[arg(long)]
    pub no_adapt: bool,
    /// Test sets to run; all sets in the index when omitted.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<String>,
    /// Method id for the output directory instead of the derived one.
    #[arg(long)]
    pub label: Option<String>,
    /// Also write wall-clock seconds per set to timing.json.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub flags: AdaptFlags,
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<()> {
    let (cfg, seed) = args.common.resolve()?;
    let model_dir = require_path(args.model.clone(), &cfg.model_dir, "model")?;
    let data = require_path(args.data.clone(), &cfg.data_dir, "data")?;
    let runs = require_path(args.out.clone(), &cfg.runs_dir, "out")?;
    let method = if args.no_adapt { Method::Source } else { args.method };
    let spec = args.flags.spec(&cfg, method)?;
    let label = args.label.clone().unwrap_or_else(|| spec.label());
    let index = DataIndex::load(&data)?;
    let sets = index.select(&args.sets)?;
    let res = Resources::load(&model_dir)?;

    let mut timing = BTreeMap::new();
    for set in &sets {
        let pages = load_test_set(&data, set)?;
        let run = run_set(&res, &spec, &label, set, &pages, seed);
        run.file.save(&crate::layout::PredictionFile::path(&runs, &label, set))?;
        for (page_id, trace) in &run.traces {
            write_json(&trace_path(&runs, &label, set, page_id), trace)?;
        }
        let row = score(&run.file, &pages)?;
        println!(
            "{label} {set}: CER {:.4} over {} lines, {} failed pages",
            row.cer, row.lines, row.failed_pages
        );
        timing.insert(set.clone(), run.seconds);
    }
    if args.timing {
        let path = runs.join(&label).join(TIMING_FILE);
        let mut all: BTreeMap<String, f64> = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        all.extend(timing);
        write_json(&path, &all)?;
    }
    Ok(())
}
