use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use ttaline::data::Page;
use ttaline::tta::ConfidenceKind;

use super::{AdaptFlags, Common};
use crate::config::require_path;
use crate::error::Result;
use crate::eval::{line_cers, mean};
use crate::layout::{csv_writer, load_test_set, write_json, DataIndex, PredictionFile};
use crate::run::{run_set, Method, Resources, RunSpec};

pub const K_SWEEP: [usize; 7] = [1, 2, 4, 6, 8, 10, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Progressive subsets and confidence weighting, on and off.
    SelfTraining,
    /// Self-labels recomputed every iteration or frozen after the first.
    Freeze,
    /// Augmentation-NED versus normalized CTC-loss confidence.
    Confidence,
    /// LM-fused versus greedy self-labels.
    LmInLoop,
    /// Optical adaptation and word-LM re-scoring switched on and off.
    Blocks,
    /// Number of iterations K.
    K,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::SelfTraining,
        Axis::Freeze,
        Axis::Confidence,
        Axis::LmInLoop,
        Axis::Blocks,
        Axis::K,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::SelfTraining => "self_training",
            Axis::Freeze => "freeze",
            Axis::Confidence => "confidence",
            Axis::LmInLoop => "lm_in_loop",
            Axis::Blocks => "blocks",
            Axis::K => "k",
        }
    }

    /// (value, run spec, score the re-scored output) for every point on the axis.
    pub fn variants(self, base: &RunSpec) -> Vec<(String, RunSpec, bool)> {
        let with = |f: &dyn Fn(&mut RunSpec)| {
            let mut s = *base;
            f(&mut s);
            s
        };
        let v = |name: &str, s: RunSpec| (name.to_string(), s, false);
        match self {
            Axis::SelfTraining => vec![
                v("progressive+reweight", *base),
                v("progressive", with(&|s| s.adaptation.reweight = false)),
                v("reweight", with(&|s| s.adaptation.progressive = false)),
                v(
                    "all-lines-unweighted",
                    with(&|s| {
                        s.adaptation.progressive = false;
                        s.adaptation.reweight = false;
                    }),
                ),
            ],
            Axis::Freeze => vec![
                v("updated", *base),
                v("frozen", with(&|s| s.adaptation.freeze_self_labels = true)),
            ],
            Axis::Confidence => vec![
                v("augmentation_ned", *base),
                v(
                    "normalized_ctc_loss",
                    with(&|s| s.adaptation.confidence_kind = ConfidenceKind::NormalizedCtcLoss),
                ),
            ],
            Axis::LmInLoop => vec![
                v("on", *base),
                v("off", with(&|s| s.adaptation.lm_in_loop = false)),
            ],
            Axis::Blocks => {
                let source = with(&|s| s.method = Method::Source);
                vec![
                    ("none".into(), source, false),
                    ("rescore-only".into(), source, true),
                    ("adapt-only".into(), *base, false),
                    ("adapt+rescore".into(), *base, true),
                ]
            }
            Axis::K => K_SWEEP
                .iter()
                .map(|&k| v(&k.to_string(), with(&|s| s.adaptation.iterations = k)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory, one CSV per axis plus summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test sets; the corrupted sets when omitted.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<String>,
    /// Use only the first N pages of each set.
    #[arg(long)]
    pub max_pages: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub axes: Vec<Axis>,
    #[command(flatten)]
    pub flags: AdaptFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisPoint {
    pub value: String,
    /// Mean CER over the ablated sets.
    pub cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisSummary {
    pub axis: String,
    pub points: Vec<AxisPoint>,
}

fn top1_only(file: &PredictionFile) -> PredictionFile {
    let mut f = file.clone();
    for p in &mut f.pages {
        for l in &mut p.lines {
            l.prediction = l.decoder_top1.clone();
        }
    }
    f
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let (cfg, seed) = args.common.resolve()?;
    let model_dir = require_path(args.model.clone(), &cfg.model_dir, "model")?;
    let data = require_path(args.data.clone(), &cfg.data_dir, "data")?;
    let out = require_path(args.out.clone(), &cfg.out_dir, "out")?;
    let index = DataIndex::load(&data)?;
    let sets = if args.sets.is_empty() { index.corrupted_sets() } else { index.select(&args.sets)? };
    let axes = if args.axes.is_empty() { Axis::ALL.to_vec() } else { args.axes.clone() };
    let mut base = args.flags.spec(&cfg, Method::Ours)?;
    base.rescore.enabled = true;
    base.confidence = false;
    let res = Resources::load(&model_dir)?;

    let mut pages: Vec<(String, Vec<Page>)> = Vec::with_capacity(sets.len());
    for set in &sets {
        let mut p = load_test_set(&data, set)?;
        if let Some(n) = args.max_pages {
            p.truncate(n);
        }
        pages.push((set.clone(), p));
    }

    let mut cache: HashMap<String, Vec<PredictionFile>> = HashMap::new();
    let mut summaries = Vec::with_capacity(axes.len());
    for axis in axes {
        let mut w = csv_writer(&out.join(format!("{}.csv", axis.name())))?;
        w.write_record(["axis", "value", "dataset", "cer", "lines"])?;
        let mut points = Vec::new();
        for (value, spec, rescored) in axis.variants(&base) {
            let key = serde_json::to_string(&spec)?;
            if !cache.contains_key(&key) {
                log::info!("ablation {} = {value}", axis.name());
                let files = pages
                    .iter()
                    .map(|(set, p)| run_set(&res, &spec, &spec.label(), set, p, seed).file)
                    .collect();
                cache.insert(key.clone(), files);
            }
            let mut cers = Vec::with_capacity(pages.len());
            for ((set, p), file) in pages.iter().zip(&cache[&key]) {
                let scored = if rescored { file.clone() } else { top1_only(file) };
                let lines = line_cers(&scored, p)?;
                let c = mean(&lines);
                w.write_record([
                    axis.name().to_string(),
                    value.clone(),
                    set.clone(),
                    format!("{c:.6}"),
                    lines.len().to_string(),
                ])?;
                cers.push(c);
            }
            let m = mean(&cers);
            println!("{:<14} {value:<22} mean CER {m:.4}", axis.name());
            points.push(AxisPoint { value, cer: m });
        }
        w.flush()?;
        summaries.push(AxisSummary {
            axis: axis.name().to_string(),
            points,
        });
    }
    write_json(&out.join("summary.json"), &summaries)?;
    Ok(())
}
