use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use super::Common;
use crate::config::require_path;
use crate::error::{CliError, Result};
use crate::eval::{attach_improvements, mean, score, ReportRow};
use crate::layout::{csv_writer, load_test_set, write_json, DataIndex, PredictionFile, CLEAN_SET, TIMING_FILE};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Runs directory written by adapt.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Output directory for report.csv and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Method ids to evaluate; every directory under the runs directory when omitted.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<String>,
    /// Add a runtime column from timing.json sidecars.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub cer: f64,
    /// Source CER minus method CER.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub datasets: BTreeMap<String, BTreeMap<String, MethodSummary>>,
    /// Averages over the corrupted sets, for methods that cover all of them.
    pub mean_over_corruptions: BTreeMap<String, MethodSummary>,
    pub corrupted_sets: Vec<String>,
}

pub fn list_methods(runs: &Path) -> Result<Vec<String>> {
    let mut out: Vec<String> = std::fs::read_dir(runs)
        .map_err(|e| CliError::usage(format!("cannot read runs directory {}: {e}", runs.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    out.sort();
    Ok(out)
}

/// Scores every available (method, set) pair.
pub fn evaluate(data: &Path, runs: &Path, methods: &[String], sets: &[String], timing: bool) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for set in sets {
        let pages = load_test_set(data, set)?;
        for m in methods {
            let path = PredictionFile::path(runs, m, set);
            if !path.exists() {
                continue;
            }
            let mut row = score(&PredictionFile::load(&path)?, &pages)?;
            if timing {
                let t: BTreeMap<String, f64> = std::fs::read_to_string(runs.join(m).join(TIMING_FILE))
                    .ok()
                    .and_then(|t| serde_json::from_str(&t).ok())
                    .unwrap_or_default();
                row.runtime_s = t.get(set).copied();
            }
            rows.push(row);
        }
    }
    attach_improvements(&mut rows);
    Ok(rows)
}

pub fn summarize(rows: &[ReportRow], corrupted: &[String]) -> EvalSummary {
    let mut datasets: BTreeMap<String, BTreeMap<String, MethodSummary>> = BTreeMap::new();
    for r in rows {
        datasets.entry(r.dataset.clone()).or_default().insert(
            r.method.clone(),
            MethodSummary {
                cer: r.cer,
                improvement: r.improvement,
            },
        );
    }
    let mut by_method: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| corrupted.contains(&r.dataset)) {
        by_method.entry(&r.method).or_default().push(r);
    }
    let source_mean = by_method
        .get("source")
        .filter(|v| v.len() == corrupted.len())
        .map(|v| mean(&v.iter().map(|r| r.cer).collect::<Vec<_>>()));
    let mean_over_corruptions = by_method
        .into_iter()
        .filter(|(_, v)| !corrupted.is_empty() && v.len() == corrupted.len())
        .map(|(m, v)| {
            let cer = mean(&v.iter().map(|r| r.cer).collect::<Vec<_>>());
            (
                m.to_string(),
                MethodSummary {
                    cer,
                    improvement: source_mean.map(|s| s - cer),
                },
            )
        })
        .collect();
    EvalSummary {
        datasets,
        mean_over_corruptions,
        corrupted_sets: corrupted.to_vec(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_report(path: &Path, rows: &[ReportRow], timing: bool) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["dataset", "method", "cer", "confidence", "lines", "failed_pages", "improvement"];
    if timing {
        header.push("runtime_s");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.method.clone(),
            format!("{:.6}", r.cer),
            opt(r.confidence),
            r.lines.to_string(),
            r.failed_pages.to_string(),
            opt(r.improvement),
        ];
        if timing {
            rec.push(r.runtime_s.map(|t| format!("{t:.2}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (cfg, _) = args.common.resolve()?;
    let data = require_path(args.data.clone(), &cfg.data_dir, "data")?;
    let runs = require_path(args.runs.clone(), &cfg.runs_dir, "runs")?;
    let out = require_path(args.out.clone(), &cfg.out_dir, "out")?;
    let index = DataIndex::load(&data)?;
    let sets = index.select(&args.sets)?;
    let methods = if args.methods.is_empty() { list_methods(&runs)? } else { args.methods.clone() };
    let rows = evaluate(&data, &runs, &methods, &sets, args.timing)?;
    if rows.is_empty() {
        return Err(CliError::data(format!("no prediction files found under {}", runs.display())));
    }
    let corrupted: Vec<String> = sets.iter().filter(|s| *s != CLEAN_SET).cloned().collect();
    let summary = summarize(&rows, &corrupted);
    write_report(&out.join("report.csv"), &rows, args.timing)?;
    write_json(&out.join("summary.json"), &summary)?;
    for r in &rows {
        println!("{:<24} {:<18} CER {:.4}  improvement {}", r.dataset, r.method, r.cer, opt(r.improvement));
    }
    for (m, s) in &summary.mean_over_corruptions {
        println!("mean over corruptions  {m:<18} CER {:.4}  improvement {}", s.cer, opt(s.improvement));
    }
    Ok(())
}
