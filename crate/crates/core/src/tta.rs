//! Page-level test-time adaptation: progressive confidence-weighted
//! self-training of the optical model, plus the normalization-statistics and
//! entropy-minimization baselines.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::confidence::{augment, confidence_from_predictions, Aggregation, AugmentationKind};
use crate::ctc::{ctc_loss_and_grad, greedy_decode, log_softmax_rows, min_frames, LogitMatrix};
use crate::data::LineImage;
use crate::decoder::{beam_search, Candidate, DecoderConfig, PrefixScorer};
use crate::optical::{
    sgd_step, stack_frames, OpticalError, OpticalModel, OptimizerState, ParamMask,
};
use crate::textcore::{ned, LabelSeq, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TtaError {
    #[error("invalid adaptation config: {0}")]
    BadConfig(String),
    #[error("a page needs at least one line")]
    EmptyPage,
    #[error(transparent)]
    Optical(#[from] OpticalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceKind {
    /// Stability of the top-1 under light augmentations.
    #[default]
    AugmentationNed,
    /// `1 − L_i / Σ_j L_j` with `L_i` the CTC loss of line i's own top-1.
    NormalizedCtcLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Number of iterations K, one gradient step each.
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Lines whose adapted prediction drifts further than this (NED w.r.t. the
    /// initial prediction) fall back to the initial prediction.
    pub divergence_threshold: f64,
    /// Produce self-labels with the LM-fused beam search instead of greedy decoding.
    pub lm_in_loop: bool,
    pub confidence_kind: ConfidenceKind,
    pub aggregation: Aggregation,
    /// Grow the trained subset as ceil(k·m/K); otherwise use all lines every time.
    pub progressive: bool,
    /// Weight each line's loss by its confidence; otherwise weight 1.
    pub reweight: bool,
    /// Compute self-labels and confidences once, before the first step.
    pub freeze_self_labels: bool,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            learning_rate: 1e-3,
            momentum: 0.9,
            divergence_threshold: 0.75,
            lm_in_loop: true,
            confidence_kind: ConfidenceKind::AugmentationNed,
            aggregation: Aggregation::Mean,
            progressive: true,
            reweight: true,
            freeze_self_labels: false,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), TtaError> {
        let bad = |m: String| Err(TtaError::BadConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if !(self.divergence_threshold >= 0.0) {
            return bad(format!(
                "divergence threshold must be nonnegative, got {}",
                self.divergence_threshold
            ));
        }
        Ok(())
    }
}

/// Size of the trained subset at iteration `k` (1-based) of `iterations`.
pub fn subset_size(k: usize, iterations: usize, m: usize, progressive: bool) -> usize {
    if progressive {
        (k * m).div_ceil(iterations).min(m)
    } else {
        m
    }
}

/// Indices of the `n` most confident lines, ties broken by lower index.
pub fn select_top(confidences: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| {
        confidences[b]
            .partial_cmp(&confidences[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// `1 − L_i / Σ_j L_j`; a single line or a zero total gives 1 everywhere.
pub fn normalized_ctc_confidence(losses: &[f64]) -> Vec<f64> {
    let total: f64 = losses.iter().sum();
    if losses.len() < 2 || !(total > 0.0) {
        return vec![1.0; losses.len()];
    }
    losses.iter().map(|l| (1.0 - l / total).clamp(0.0, 1.0)).collect()
}

/// Emitted prediction under the divergence guard; `true` when reverted.
pub fn guard(initial: &str, adapted: &str, threshold: f64) -> bool {
    ned(initial, adapted) > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub self_labels: Vec<String>,
    pub confidences: Vec<f64>,
    pub selected: Vec<usize>,
    /// Lines dropped from the loss because their self-label cannot fit.
    pub dropped: Vec<usize>,
    pub weighted_loss: f64,
    pub update_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    pub config: AdaptationConfig,
    pub iterations: Vec<IterationRecord>,
    pub initial_predictions: Vec<String>,
    pub final_predictions: Vec<String>,
    pub reverted: Vec<bool>,
    pub emitted: Vec<String>,
}

impl AdaptationTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace values are finite")
    }
}

#[derive(Debug, Clone)]
pub struct PageAdaptation {
    /// Emitted prediction per line, after the guard.
    pub predictions: Vec<String>,
    /// Top-k candidates of the model state that produced each emitted prediction.
    pub candidates: Vec<Vec<Candidate>>,
    pub trace: AdaptationTrace,
}

struct Decoded {
    texts: Vec<String>,
    labels: Vec<LabelSeq>,
    candidates: Vec<Vec<Candidate>>,
}

fn to_text(vocab: &Vocabulary, label: &LabelSeq) -> String {
    vocab.decode(label).expect("decoder emits vocabulary labels")
}

fn logits_of(model: &OpticalModel, frames: &[Array2<f64>]) -> Vec<LogitMatrix> {
    let parts: Vec<&Array2<f64>> = frames.iter().collect();
    let (x, ranges) = stack_frames(&parts);
    let (all, _) = model.forward_frames(&x);
    ranges
        .into_iter()
        .map(|r| LogitMatrix::new(all.slice(s![r, ..]).to_owned()).expect("finite model output"))
        .collect()
}

fn decode_all<S: PrefixScorer + ?Sized>(
    logits: &[LogitMatrix],
    scorer: &S,
    vocab: &Vocabulary,
    decoder: &DecoderConfig,
    beam: bool,
) -> Decoded {
    let mut out = Decoded {
        texts: Vec::with_capacity(logits.len()),
        labels: Vec::with_capacity(logits.len()),
        candidates: Vec::with_capacity(logits.len()),
    };
    for l in logits {
        let (label, cands) = if beam {
            let c = beam_search(l, scorer, decoder);
            (c.first().map(|c| c.text.clone()).unwrap_or_default(), c)
        } else {
            (greedy_decode(l), Vec::new())
        };
        out.texts.push(to_text(vocab, &label));
        out.labels.push(label);
        out.candidates.push(cands);
    }
    out
}

/// Runs the progressive self-training loop on one page and applies the
/// divergence guard. The model is left adapted; callers reset it to the source
/// checkpoint before the next page.
pub fn adapt_page<S: PrefixScorer + ?Sized>(
    model: &mut OpticalModel,
    lines: &[LineImage],
    scorer: &S,
    vocab: &Vocabulary,
    decoder: &DecoderConfig,
    config: &AdaptationConfig,
) -> Result<PageAdaptation, TtaError> {
    config.validate()?;
    decoder.validate().map_err(TtaError::BadConfig)?;
    if lines.is_empty() {
        return Err(TtaError::EmptyPage);
    }
    let m = lines.len();
    let frames: Vec<Array2<f64>> = lines.iter().map(|l| model.frames(l)).collect::<Result<_, _>>()?;
    let aug_frames: Vec<Array2<f64>> = if config.confidence_kind == ConfidenceKind::AugmentationNed {
        let mut v = Vec::with_capacity(3 * m);
        for l in lines {
            for k in AugmentationKind::ALL {
                v.push(model.frames(&augment(l, k))?);
            }
        }
        v
    } else {
        Vec::new()
    };

    let initial = decode_all(&logits_of(model, &frames), scorer, vocab, decoder, true);
    let mut opt = OptimizerState::new(model, config.learning_rate, config.momentum);
    let mut records = Vec::with_capacity(config.iterations);
    let mut frozen: Option<(Vec<LabelSeq>, Vec<String>, Vec<f64>)> = None;

    for k in 1..=config.iterations {
        let logits = logits_of(model, &frames);
        let (labels, texts, conf) = match &frozen {
            Some(f) => f.clone(),
            None => {
                let own = if k == 1 && config.lm_in_loop {
                    Decoded {
                        texts: initial.texts.clone(),
                        labels: initial.labels.clone(),
                        candidates: Vec::new(),
                    }
                } else {
                    decode_all(&logits, scorer, vocab, decoder, config.lm_in_loop)
                };
                let conf = match config.confidence_kind {
                    ConfidenceKind::AugmentationNed => {
                        let aug_logits = logits_of(model, &aug_frames);
                        let aug = decode_all(&aug_logits, scorer, vocab, decoder, config.lm_in_loop);
                        (0..m)
                            .map(|i| {
                                confidence_from_predictions(
                                    &own.texts[i],
                                    &aug.texts[3 * i..3 * i + 3],
                                    config.aggregation,
                                )
                            })
                            .collect()
                    }
                    ConfidenceKind::NormalizedCtcLoss => {
                        let losses: Vec<f64> = (0..m)
                            .map(|i| {
                                ctc_loss_and_grad(&logits[i], &own.labels[i])
                                    .map(|(l, _)| l)
                                    .unwrap_or(f64::INFINITY)
                            })
                            .collect();
                        let finite: Vec<f64> = losses
                            .iter()
                            .map(|&l| if l.is_finite() { l } else { 0.0 })
                            .collect();
                        let mut c = normalized_ctc_confidence(&finite);
                        for (c, l) in c.iter_mut().zip(&losses) {
                            if !l.is_finite() {
                                *c = 0.0;
                            }
                        }
                        c
                    }
                };
                let out = (own.labels, own.texts, conf);
                if config.freeze_self_labels {
                    frozen = Some(out.clone());
                }
                out
            }
        };

        let n = subset_size(k, config.iterations, m, config.progressive);
        let selected = select_top(&conf, n);
        let mut dropped = Vec::new();
        let mut used = Vec::new();
        let mut grad_parts = Vec::new();
        let mut loss = 0.0;
        for &i in &selected {
            if frames[i].nrows() < min_frames(labels[i].as_slice()) {
                dropped.push(i);
                continue;
            }
            let w = if config.reweight { conf[i] } else { 1.0 };
            let (l, g) = ctc_loss_and_grad(&logits[i], &labels[i])
                .map_err(OpticalError::from)?;
            loss += w * l;
            used.push(i);
            grad_parts.push(g * w);
        }
        let mut update_norm = 0.0;
        if !used.is_empty() {
            let parts: Vec<&Array2<f64>> = used.iter().map(|&i| &frames[i]).collect();
            let (x, _) = stack_frames(&parts);
            let gparts: Vec<&Array2<f64>> = grad_parts.iter().collect();
            let (g, _) = stack_frames(&gparts);
            let (_, cache) = model.forward_frames(&x);
            let grads = model.backward_frames(&x, &cache, &g);
            update_norm = sgd_step(model, &mut opt, &grads, ParamMask::ALL)?;
        }
        records.push(IterationRecord {
            iteration: k,
            self_labels: texts,
            confidences: conf,
            selected,
            dropped,
            weighted_loss: loss,
            update_norm,
        });
    }

    let fin = decode_all(&logits_of(model, &frames), scorer, vocab, decoder, true);
    let mut predictions = Vec::with_capacity(m);
    let mut candidates = Vec::with_capacity(m);
    let mut reverted = Vec::with_capacity(m);
    for i in 0..m {
        let back = guard(&initial.texts[i], &fin.texts[i], config.divergence_threshold);
        reverted.push(back);
        let src = if back { &initial } else { &fin };
        predictions.push(src.texts[i].clone());
        candidates.push(src.candidates[i].clone());
    }
    Ok(PageAdaptation {
        trace: AdaptationTrace {
            config: *config,
            iterations: records,
            initial_predictions: initial.texts,
            final_predictions: fin.texts,
            reverted,
            emitted: predictions.clone(),
        },
        predictions,
        candidates,
    })
}

/// Hidden pre-normalization mean and biased variance over all frames of a page.
pub fn page_stats(model: &OpticalModel, lines: &[LineImage]) -> Result<(Array1<f64>, Array1<f64>), TtaError> {
    if lines.is_empty() {
        return Err(TtaError::EmptyPage);
    }
    let frames: Vec<Array2<f64>> = lines.iter().map(|l| model.frames(l)).collect::<Result<_, _>>()?;
    let parts: Vec<&Array2<f64>> = frames.iter().collect();
    let (x, _) = stack_frames(&parts);
    Ok(model.batch_stats(&x))
}

/// Running statistics ← (1−rho)·source + rho·page statistics.
pub fn adapt_bn(model: &mut OpticalModel, lines: &[LineImage], rho: f64) -> Result<(), TtaError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(TtaError::BadConfig(format!("rho must lie in [0,1], got {rho}")));
    }
    let (mean, var) = page_stats(model, lines)?;
    let mix = |src: &Array1<f64>, tgt: &Array1<f64>| -> Array1<f64> {
        src.iter()
            .zip(tgt)
            .map(|(&s, &t)| if rho == 1.0 { t } else { (1.0 - rho) * s + rho * t })
            .collect()
    };
    let new_mean = mix(&model.running_mean, &mean);
    let new_var = mix(&model.running_var, &var);
    model.set_running_stats(new_mean, new_var);
    Ok(())
}

/// Replaces the running statistics with the page statistics.
pub fn adapt_ptn(model: &mut OpticalModel, lines: &[LineImage]) -> Result<(), TtaError> {
    adapt_bn(model, lines, 1.0)
}

/// Mean per-frame entropy of the softmax posteriors over all rows of `logits`
/// and its gradient w.r.t. the logits.
pub fn entropy_loss_and_grad(logits: &Array2<f64>) -> (f64, Array2<f64>) {
    let lm = LogitMatrix::new(logits.clone()).expect("finite logits");
    let lp = log_softmax_rows(&lm);
    let n = logits.nrows().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (t, row) in lp.axis_iter(Axis(0)).enumerate() {
        let h: f64 = -row.iter().map(|&l| l.exp() * l).sum::<f64>();
        total += h;
        for (j, &l) in row.iter().enumerate() {
            grad[[t, j]] = -l.exp() * (l + h) / n;
        }
    }
    (total / n, grad)
}

/// Entropy minimization over gamma/beta for `config.iterations` steps, with the
/// running statistics held fixed. Returns the loss before each step.
pub fn adapt_entropy(
    model: &mut OpticalModel,
    lines: &[LineImage],
    config: &AdaptationConfig,
) -> Result<Vec<f64>, TtaError> {
    config.validate()?;
    if lines.is_empty() {
        return Err(TtaError::EmptyPage);
    }
    let frames: Vec<Array2<f64>> = lines.iter().map(|l| model.frames(l)).collect::<Result<_, _>>()?;
    let parts: Vec<&Array2<f64>> = frames.iter().collect();
    let (x, _) = stack_frames(&parts);
    let mut opt = OptimizerState::new(model, config.learning_rate, config.momentum);
    let mut losses = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (logits, cache) = model.forward_frames(&x);
        let (h, g) = entropy_loss_and_grad(&logits);
        losses.push(h);
        let grads = model.backward_frames(&x, &cache, &g);
        sgd_step(model, &mut opt, &grads, ParamMask::NORM_AFFINE)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_sizes() {
        let sizes: Vec<usize> = (1..=4).map(|k| subset_size(k, 4, 8, true)).collect();
        assert_eq!(sizes, vec![2, 4, 6, 8]);
        let sizes: Vec<usize> = (1..=4).map(|k| subset_size(k, 4, 5, true)).collect();
        assert_eq!(sizes, vec![2, 3, 4, 5]);
        assert_eq!(subset_size(1, 4, 8, false), 8);
        assert_eq!(subset_size(1, 12, 3, true), 1);
    }

    #[test]
    fn selection_prefers_confident_then_lower_index() {
        assert_eq!(select_top(&[0.2, 0.9, 0.5, 0.9], 3), vec![1, 3, 2]);
    }

    #[test]
    fn guard_examples() {
        assert!(guard("hello", "zzzzz", 0.75));
        assert!(!guard("hello", "hallo", 0.75));
        // exactly at the threshold is kept
        assert!(!guard("abcd", "xyzd", 0.75));
    }

    #[test]
    fn normalized_ctc_examples() {
        let c = normalized_ctc_confidence(&[1.0, 3.0]);
        assert_eq!(c, vec![0.75, 0.25]);
        assert_eq!(normalized_ctc_confidence(&[4.0]), vec![1.0]);
        assert_eq!(normalized_ctc_confidence(&[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn uniform_entropy_is_log_classes() {
        let (h, g) = entropy_loss_and_grad(&Array2::zeros((5, 7)));
        assert!((h - 7f64.ln()).abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }
}
