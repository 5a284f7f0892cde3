//! CTC prefix beam search with shallow fusion of a character language model.

use std::cmp::Ordering;

use ndarray::Array2;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::ctc::{log_softmax_rows, logsumexp, LogitMatrix};
use crate::lm::CharNGramModel;
use crate::textcore::{LabelSeq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Weight of the character LM log score.
    pub alpha: f64,
    pub beam_width: usize,
    /// Number of candidates returned.
    pub k: usize,
    /// Skip extensions by characters whose frame posterior is below this value.
    /// `None` extends by every character (exact within the beam).
    pub char_prune: Option<f64>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beam_width: 16,
            k: 8,
            char_prune: Some(1e-4),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(format!("alpha must be finite and nonnegative, got {}", self.alpha));
        }
        if self.k == 0 || self.beam_width < self.k {
            return Err(format!(
                "need beam_width >= k >= 1, got beam_width {} and k {}",
                self.beam_width, self.k
            ));
        }
        if let Some(p) = self.char_prune {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("char_prune must lie in [0,1), got {p}"));
            }
        }
        Ok(())
    }
}

/// One decoded hypothesis. `opt_score = −(optical_logprob + alpha·lm_logprob)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: LabelSeq,
    pub opt_score: f64,
    /// Log probability mass of the prefix surviving in the beam.
    pub optical_logprob: f64,
    /// Unweighted sum of LM scores over the emitted characters.
    pub lm_logprob: f64,
}

/// Scores the next label given the labels emitted so far.
pub trait PrefixScorer {
    fn score(&self, prefix: &[usize], next: usize) -> f64;
}

/// Scorer that assigns zero to everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullScorer;

impl PrefixScorer for NullScorer {
    fn score(&self, _: &[usize], _: usize) -> f64 {
        0.0
    }
}

/// Character n-gram model over a vocabulary's label indices, with the
/// line-start padding used in training.
#[derive(Debug, Clone, Copy)]
pub struct CharLmScorer<'a> {
    pub lm: &'a CharNGramModel,
    pub vocab: &'a Vocabulary,
}

impl<'a> CharLmScorer<'a> {
    pub fn new(lm: &'a CharNGramModel, vocab: &'a Vocabulary) -> Self {
        Self { lm, vocab }
    }
}

impl PrefixScorer for CharLmScorer<'_> {
    fn score(&self, prefix: &[usize], next: usize) -> f64 {
        let keep = self.lm.order().saturating_sub(1);
        let tail = &prefix[prefix.len().saturating_sub(keep)..];
        let chars: Vec<char> = tail.iter().filter_map(|&i| self.vocab.symbol(i)).collect();
        let ctx = if prefix.len() > keep {
            chars
        } else {
            self.lm.line_context(&chars)
        };
        match self.vocab.symbol(next) {
            Some(c) => self.lm.score(c, &ctx),
            None => f64::NEG_INFINITY,
        }
    }
}

struct Node {
    labels: Vec<usize>,
    lm_total: f64,
}

#[derive(Clone, Copy)]
struct Beam {
    node: usize,
    pb: f64,
    pnb: f64,
}

impl Beam {
    fn total(&self) -> f64 {
        logsumexp(self.pb, self.pnb)
    }
}

fn cmp_desc(a: f64, la: &[usize], b: f64, lb: &[usize]) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal).then_with(|| la.cmp(lb))
}

/// Prefix beam search. Returns up to `k` candidates sorted by ascending
/// `opt_score`, ties broken lexicographically on the label sequence.
pub fn beam_search<S: PrefixScorer + ?Sized>(
    logits: &LogitMatrix,
    scorer: &S,
    config: &DecoderConfig,
) -> Vec<Candidate> {
    let lp = log_softmax_rows(logits);
    beam_search_logprobs(&lp, logits.blank(), scorer, config)
}

fn beam_search_logprobs<S: PrefixScorer + ?Sized>(
    lp: &Array2<f64>,
    blank: usize,
    scorer: &S,
    config: &DecoderConfig,
) -> Vec<Candidate> {
    let (t_len, classes) = lp.dim();
    let alpha = config.alpha;
    let prune = config.char_prune.filter(|&p| p > 0.0).map(f64::ln);
    let mut nodes = vec![Node {
        labels: Vec::new(),
        lm_total: 0.0,
    }];
    let mut children: FxHashMap<(usize, usize), usize> = FxHashMap::default();
    let mut beams = vec![Beam {
        node: 0,
        pb: 0.0,
        pnb: f64::NEG_INFINITY,
    }];
    // slot of each node in the next beam set, valid for the current frame only
    let mut slot: FxHashMap<usize, usize> = FxHashMap::default();
    let mut next: Vec<Beam> = Vec::new();

    for t in 0..t_len {
        let row = lp.row(t);
        slot.clear();
        next.clear();
        let mut add = |next: &mut Vec<Beam>, node: usize, pb: f64, pnb: f64| {
            let i = *slot.entry(node).or_insert_with(|| {
                next.push(Beam {
                    node,
                    pb: f64::NEG_INFINITY,
                    pnb: f64::NEG_INFINITY,
                });
                next.len() - 1
            });
            let b = &mut next[i];
            b.pb = logsumexp(b.pb, pb);
            b.pnb = logsumexp(b.pnb, pnb);
        };
        for beam in &beams {
            let total = beam.total();
            let last = nodes[beam.node].labels.last().copied();
            add(&mut next, beam.node, total + row[blank], f64::NEG_INFINITY);
            if let Some(c) = last {
                add(&mut next, beam.node, f64::NEG_INFINITY, beam.pnb + row[c]);
            }
            for c in 0..classes {
                if c == blank {
                    continue;
                }
                let p = row[c];
                if prune.is_some_and(|th| p < th) {
                    continue;
                }
                let child = match children.get(&(beam.node, c)) {
                    Some(&n) => n,
                    None => {
                        let parent = &nodes[beam.node];
                        let lm = if alpha == 0.0 {
                            0.0
                        } else {
                            scorer.score(&parent.labels, c)
                        };
                        let mut labels = parent.labels.clone();
                        labels.push(c);
                        let lm_total = parent.lm_total + lm;
                        nodes.push(Node { labels, lm_total });
                        children.insert((beam.node, c), nodes.len() - 1);
                        nodes.len() - 1
                    }
                };
                let mass = if Some(c) == last { beam.pb } else { total };
                add(&mut next, child, f64::NEG_INFINITY, mass + p);
            }
        }
        let score = |b: &Beam| b.total() + alpha * nodes[b.node].lm_total;
        next.retain(|b| score(b) > f64::NEG_INFINITY);
        if next.len() > config.beam_width {
            next.sort_by(|a, b| cmp_desc(score(a), &nodes[a.node].labels, score(b), &nodes[b.node].labels));
            next.truncate(config.beam_width);
        }
        std::mem::swap(&mut beams, &mut next);
    }

    let mut out: Vec<Candidate> = beams
        .iter()
        .map(|b| {
            let n = &nodes[b.node];
            let optical = b.total();
            Candidate {
                text: LabelSeq(n.labels.clone()),
                opt_score: -(optical + alpha * n.lm_total),
                optical_logprob: optical,
                lm_logprob: if alpha == 0.0 { 0.0 } else { n.lm_total },
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.opt_score
            .partial_cmp(&b.opt_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.text.0.cmp(&b.text.0))
    });
    out.truncate(config.k);
    out
}

/// Best candidate's text, or the empty sequence when nothing survives.
pub fn decode_top1<S: PrefixScorer + ?Sized>(
    logits: &LogitMatrix,
    scorer: &S,
    config: &DecoderConfig,
) -> LabelSeq {
    beam_search(logits, scorer, config)
        .into_iter()
        .next()
        .map(|c| c.text)
        .unwrap_or_default()
}
