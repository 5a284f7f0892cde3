//! N-best re-ranking of decoder candidates with a line-level language model.

use serde::{Deserialize, Serialize};

use crate::decoder::Candidate;
use crate::lm::WordNGramModel;
use crate::textcore::Vocabulary;

/// Anything that assigns a log score to a whole line.
pub trait LineScorer {
    fn line_logprob(&self, line: &str) -> f64;
}

impl LineScorer for WordNGramModel {
    fn line_logprob(&self, line: &str) -> f64 {
        self.logprob(line)
    }
}

impl<F: Fn(&str) -> f64> LineScorer for F {
    fn line_logprob(&self, line: &str) -> f64 {
        self(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    /// Weight of the line LM loss.
    pub w: f64,
    pub enabled: bool,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self { w: 0.5, enabled: true }
    }
}

/// `argmin_i opt_i + w·lm_i` over parallel loss lists; ties go to the lowest index.
pub fn argmin_combined(opt_losses: &[f64], lm_losses: &[f64], w: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, (o, l)) in opt_losses.iter().zip(lm_losses).enumerate() {
        let s = if w == 0.0 { *o } else { o + w * l };
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Index of the chosen candidate. Candidates are expected in decoder order
/// (ascending `opt_score`); disabled re-scoring or an empty list gives 0.
pub fn rescore<L: LineScorer + ?Sized>(
    candidates: &[Candidate],
    vocab: &Vocabulary,
    scorer: &L,
    config: &RescoreConfig,
) -> usize {
    if !config.enabled || candidates.len() < 2 {
        return 0;
    }
    let opt: Vec<f64> = candidates.iter().map(|c| c.opt_score).collect();
    let lm: Vec<f64> = candidates
        .iter()
        .map(|c| -scorer.line_logprob(&vocab.decode(&c.text).expect("vocabulary labels")))
        .collect();
    argmin_combined(&opt, &lm, config.w)
}
