//! CER scoring of prediction files, report rows and rank statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use ttaline::data::Page;
use ttaline::textcore::cer;

use crate::error::{CliError, Result};
use crate::layout::{PageStatus, PredictionFile};

/// Line CER capped at 1, so a runaway hypothesis counts as one fully wrong line.
pub fn line_cer(prediction: &str, reference: &str) -> f64 {
    match cer(prediction, reference) {
        Ok(c) => c.min(1.0),
        Err(_) => {
            if prediction.is_empty() {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Per-line CER of `file` against the pages, in page then line order. Lines
/// of failed pages score 1.
pub fn line_cers(file: &PredictionFile, pages: &[Page]) -> Result<Vec<f64>> {
    let by_id: BTreeMap<&str, _> = file.pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let expected: BTreeSet<&str> = pages.iter().map(|p| p.page_id.as_str()).collect();
    let missing: Vec<&str> = expected.iter().filter(|id| !by_id.contains_key(*id)).copied().collect();
    let extra: Vec<&str> = by_id.keys().filter(|id| !expected.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::data(format!(
            "predictions for {} / {} do not match the manifests; missing: [{}], unexpected: [{}]",
            file.method,
            file.set,
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut out = Vec::new();
    for page in pages {
        let pred = by_id[page.page_id.as_str()];
        if pred.status == PageStatus::Failed {
            out.extend(std::iter::repeat_n(1.0, page.lines.len()));
            continue;
        }
        if pred.lines.len() != page.lines.len() {
            return Err(CliError::data(format!(
                "page {} has {} lines but {} predictions",
                page.page_id,
                page.lines.len(),
                pred.lines.len()
            )));
        }
        out.extend(pred.lines.iter().zip(&page.lines).map(|(p, l)| line_cer(&p.prediction, &l.text)));
    }
    Ok(out)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub cer: f64,
    /// Mean augmentation-NED confidence of the emitted lines, when recorded.
    pub confidence: Option<f64>,
    pub lines: usize,
    pub failed_pages: usize,
    /// `source CER − method CER` on the same dataset.
    pub improvement: Option<f64>,
    /// Wall-clock seconds, only when timing sidecars were requested.
    pub runtime_s: Option<f64>,
}

pub fn score(file: &PredictionFile, pages: &[Page]) -> Result<ReportRow> {
    let cers = line_cers(file, pages)?;
    let conf: Vec<f64> = file
        .pages
        .iter()
        .flat_map(|p| p.lines.iter().filter_map(|l| l.confidence))
        .collect();
    Ok(ReportRow {
        dataset: file.set.clone(),
        method: file.method.clone(),
        cer: mean(&cers),
        confidence: (!conf.is_empty()).then(|| mean(&conf)),
        lines: cers.len(),
        failed_pages: file.failed_pages(),
        improvement: None,
        runtime_s: None,
    })
}

/// Fills `improvement` from the `source` row of each dataset.
pub fn attach_improvements(rows: &mut [ReportRow]) {
    let source: BTreeMap<String, f64> = rows
        .iter()
        .filter(|r| r.method == "source")
        .map(|r| (r.dataset.clone(), r.cer))
        .collect();
    for r in rows {
        r.improvement = source.get(&r.dataset).map(|s| s - r.cer);
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}
