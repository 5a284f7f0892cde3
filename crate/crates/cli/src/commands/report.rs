use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use ttaline::ctc::ctc_loss;
use ttaline::data::{mix_pages, mix_seed, Page};
use ttaline::textcore::replacement_edits;
use ttaline::tta::normalized_ctc_confidence;

use super::Common;
use crate::config::require_path;
use crate::error::{CliError, Result};
use crate::eval::{line_cers, mean, spearman};
use crate::layout::{csv_writer, load_test_set, write_json, DataIndex, PageStatus, PredictionFile};
use crate::run::{run_set, Resources, RunSpec};

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Runs directory holding the source and adapted predictions.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test sets; every set in the index when omitted.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<String>,
    /// Method id of the unadapted run; it must carry per-line confidences.
    #[arg(long, default_value = "source")]
    pub source_method: String,
    #[arg(long, default_value = "ours")]
    pub adapted_method: String,
    /// Sets used for the mixed-writer comparison; the first selected set when omitted.
    #[arg(long, value_delimiter = ',')]
    pub mix_sets: Vec<String>,
    /// Number of random page mixings per set.
    #[arg(long, default_value_t = 2)]
    pub mix_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixRow {
    pub dataset: String,
    pub mix: usize,
    pub single_writer_cer: f64,
    pub mixed_cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub lines: usize,
    /// Spearman correlation of each confidence with 1 − CER.
    pub spearman_augmentation_ned: Option<f64>,
    pub spearman_normalized_ctc_loss: Option<f64>,
    pub replacements_source: usize,
    pub replacements_adapted: usize,
    pub mixed: Vec<MixRow>,
    pub mean_single_writer_cer: Option<f64>,
    pub mean_mixed_cer: Option<f64>,
}

/// Per-line (augmentation-NED confidence, normalized CTC-loss confidence, CER)
/// of the unadapted model's decoder top-1.
fn confidence_rows(res: &Resources, file: &PredictionFile, pages: &[Page]) -> Result<Vec<(String, usize, f64, f64, f64)>> {
    let by_id: BTreeMap<&str, _> = file.pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let mut rows = Vec::new();
    for page in pages {
        let pred = by_id.get(page.page_id.as_str()).ok_or_else(|| {
            CliError::data(format!("{} / {} has no page {}", file.method, file.set, page.page_id))
        })?;
        if pred.status == PageStatus::Failed {
            continue;
        }
        if pred.lines.len() != page.lines.len() {
            return Err(CliError::data(format!("page {} has mismatched line counts", page.page_id)));
        }
        let mut losses = Vec::with_capacity(page.lines.len());
        for (p, l) in pred.lines.iter().zip(&page.lines) {
            let label = res.vocab.encode(&p.decoder_top1)?;
            let logits = res.checkpoint.model.forward(&l.image)?;
            losses.push(ctc_loss(&logits, &label).unwrap_or(f64::INFINITY));
        }
        let finite: Vec<f64> = losses.iter().map(|&l| if l.is_finite() { l } else { 0.0 }).collect();
        let ctc_conf = normalized_ctc_confidence(&finite);
        for (i, (p, l)) in pred.lines.iter().zip(&page.lines).enumerate() {
            let aug = p.confidence.ok_or_else(|| {
                CliError::data(format!(
                    "{} / {} carries no confidences; rerun adapt without --skip-confidence",
                    file.method, file.set
                ))
            })?;
            let ctc = if losses[i].is_finite() { ctc_conf[i] } else { 0.0 };
            rows.push((page.page_id.clone(), i, aug, ctc, crate::eval::line_cer(&p.decoder_top1, &l.text)));
        }
    }
    Ok(rows)
}

fn count_replacements(files: &[(PredictionFile, Vec<Page>)]) -> BTreeMap<(char, char), usize> {
    let mut counts = BTreeMap::new();
    for (file, pages) in files {
        let by_id: BTreeMap<&str, _> = file.pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
        for page in pages {
            let Some(pred) = by_id.get(page.page_id.as_str()) else { continue };
            for (p, l) in pred.lines.iter().zip(&page.lines) {
                for e in replacement_edits(&l.text, &p.prediction) {
                    *counts.entry(e).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Rows sorted by count, descending, then by character pair.
pub fn ranked(counts: &BTreeMap<(char, char), usize>) -> Vec<(char, char, usize)> {
    let mut v: Vec<(char, char, usize)> = counts.iter().map(|(&(a, b), &n)| (a, b, n)).collect();
    v.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    v
}

fn write_replacements(path: &std::path::Path, rows: &[(char, char, usize)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["gt_char", "pred_char", "count"])?;
    for (a, b, n) in rows {
        w.write_record([a.to_string(), b.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let (cfg, seed) = args.common.resolve()?;
    let model_dir = require_path(args.model.clone(), &cfg.model_dir, "model")?;
    let data = require_path(args.data.clone(), &cfg.data_dir, "data")?;
    let runs = require_path(args.runs.clone(), &cfg.runs_dir, "runs")?;
    let out = require_path(args.out.clone(), &cfg.out_dir, "out")?;
    let index = DataIndex::load(&data)?;
    let sets = index.select(&args.sets)?;
    let mix_sets = if args.mix_sets.is_empty() {
        sets.iter().take(1).cloned().collect()
    } else {
        index.select(&args.mix_sets)?
    };
    let res = Resources::load(&model_dir)?;

    let mut source = Vec::new();
    let mut adapted = Vec::new();
    for set in &sets {
        let pages = load_test_set(&data, set)?;
        let s = PredictionFile::load(&PredictionFile::path(&runs, &args.source_method, set))?;
        let a = PredictionFile::load(&PredictionFile::path(&runs, &args.adapted_method, set))?;
        line_cers(&s, &pages)?;
        line_cers(&a, &pages)?;
        source.push((s, pages.clone()));
        adapted.push((a, pages));
    }

    let mut w = csv_writer(&out.join("correlation.csv"))?;
    w.write_record([
        "dataset",
        "page_id",
        "line",
        "confidence_augmentation_ned",
        "confidence_normalized_ctc_loss",
        "cer",
    ])?;
    let (mut aug, mut ctc, mut acc) = (Vec::new(), Vec::new(), Vec::new());
    for (file, pages) in &source {
        for (page_id, i, a, c, e) in confidence_rows(&res, file, pages)? {
            w.write_record([
                file.set.clone(),
                page_id,
                i.to_string(),
                format!("{a:.6}"),
                format!("{c:.6}"),
                format!("{e:.6}"),
            ])?;
            aug.push(a);
            ctc.push(c);
            acc.push(1.0 - e);
        }
    }
    w.flush()?;

    let rep_source = ranked(&count_replacements(&source));
    let rep_adapted = ranked(&count_replacements(&adapted));
    write_replacements(&out.join("replacements_source.csv"), &rep_source)?;
    write_replacements(&out.join("replacements_adapted.csv"), &rep_adapted)?;

    let mut mixed = Vec::new();
    for set in &mix_sets {
        let (file, pages) = adapted
            .iter()
            .find(|(f, _)| &f.set == set)
            .ok_or_else(|| CliError::usage(format!("mix set {set} is not among the selected sets")))?;
        let mut spec: RunSpec = serde_json::from_value(file.run.clone())
            .map_err(|e| CliError::data(format!("{} / {set}: unreadable run spec: {e}", file.method)))?;
        spec.confidence = false;
        let single = mean(&line_cers(file, pages)?);
        for m in 0..args.mix_seeds {
            let mix = mix_pages(pages, mix_seed(seed, 0x6d00 + m as u64))?;
            let run = run_set(&res, &spec, &file.method, set, &mix, seed);
            let cer = mean(&line_cers(&run.file, &mix)?);
            println!("{set} mix {m}: single-writer CER {single:.4}, mixed CER {cer:.4}");
            mixed.push(MixRow {
                dataset: set.clone(),
                mix: m,
                single_writer_cer: single,
                mixed_cer: cer,
            });
        }
    }
    let mut w = csv_writer(&out.join("mixed_pages.csv"))?;
    w.write_record(["dataset", "mix", "single_writer_cer", "mixed_cer"])?;
    for r in &mixed {
        w.write_record([
            r.dataset.clone(),
            r.mix.to_string(),
            format!("{:.6}", r.single_writer_cer),
            format!("{:.6}", r.mixed_cer),
        ])?;
    }
    w.flush()?;

    let summary = ReportSummary {
        lines: acc.len(),
        spearman_augmentation_ned: spearman(&aug, &acc),
        spearman_normalized_ctc_loss: spearman(&ctc, &acc),
        replacements_source: rep_source.iter().map(|r| r.2).sum(),
        replacements_adapted: rep_adapted.iter().map(|r| r.2).sum(),
        mean_single_writer_cer: (!mixed.is_empty())
            .then(|| mean(&mixed.iter().map(|r| r.single_writer_cer).collect::<Vec<_>>())),
        mean_mixed_cer: (!mixed.is_empty()).then(|| mean(&mixed.iter().map(|r| r.mixed_cer).collect::<Vec<_>>())),
        mixed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "spearman vs 1-CER over {} lines: augmentation-NED {:?}, normalized CTC loss {:?}",
        summary.lines, summary.spearman_augmentation_ned, summary.spearman_normalized_ctc_loss
    );
    println!(
        "replacement edits: source {}, adapted {}",
        summary.replacements_source, summary.replacements_adapted
    );
    Ok(())
}
