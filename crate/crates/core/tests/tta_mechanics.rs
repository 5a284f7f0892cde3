//! Progressive self-training loop, divergence guard and model resets.

use ttaline::data::corpus::synth_corpus;
use ttaline::data::{gen_pages, DatasetSpec, Page, Split, StyleRanges};
use ttaline::decoder::{CharLmScorer, DecoderConfig};
use ttaline::lm::CharNGramModel;
use ttaline::optical::{Checkpoint, OpticalConfig, OpticalModel, OptimizerState};
use ttaline::textcore::{ned, Vocabulary};
use ttaline::tta::{adapt_page, guard, subset_size, AdaptationConfig, ConfidenceKind};

struct Fixture {
    vocab: Vocabulary,
    lm: CharNGramModel,
    model: OpticalModel,
    pages: Vec<Page>,
}

fn fixture() -> Fixture {
    let corpus = synth_corpus(200, 8, 14, 5);
    let vocab = Vocabulary::from_corpus(corpus.iter().map(String::as_str)).unwrap();
    let lm = CharNGramModel::train(&corpus[16..], 5).unwrap();
    let spec = DatasetSpec {
        n_writers: 2,
        pages_per_writer: 1,
        lines_per_page: 8,
        styles: StyleRanges::default(),
    };
    let pages = gen_pages(&corpus[..16], Split::Test, &spec, 3).unwrap();
    let mut cfg = OpticalConfig::new(vocab.num_classes());
    cfg.hidden = 24;
    let model = OpticalModel::new(cfg, 9).unwrap();
    Fixture { vocab, lm, model, pages }
}

fn decoder() -> DecoderConfig {
    DecoderConfig {
        beam_width: 4,
        k: 3,
        ..DecoderConfig::default()
    }
}

#[test]
fn progressive_subsets_for_eight_lines() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let mut m = f.model.clone();
    let out = adapt_page(&mut m, &f.pages[0].images(), &scorer, &f.vocab, &decoder(), &AdaptationConfig::default()).unwrap();
    let sizes: Vec<usize> = out.trace.iterations.iter().map(|r| r.selected.len()).collect();
    assert_eq!(sizes, vec![2, 4, 6, 8]);
    assert_eq!(out.trace.iterations.len(), 4);
    assert_eq!(
        out.trace.iterations.iter().map(|r| r.iteration).collect::<Vec<_>>(),
        vec![1, 2, 3, 4]
    );
    for r in &out.trace.iterations {
        // the selected lines are the most confident ones
        let worst_in = r.selected.iter().map(|&i| r.confidences[i]).fold(f64::INFINITY, f64::min);
        let best_out = (0..8)
            .filter(|i| !r.selected.contains(i))
            .map(|i| r.confidences[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_in >= best_out);
    }
}

#[test]
fn trace_length_follows_iterations() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    for k in [1, 3, 6] {
        let mut m = f.model.clone();
        let cfg = AdaptationConfig {
            iterations: k,
            ..AdaptationConfig::default()
        };
        let out = adapt_page(&mut m, &f.pages[0].images(), &scorer, &f.vocab, &decoder(), &cfg).unwrap();
        assert_eq!(out.trace.iterations.len(), k);
        let sizes: Vec<usize> = out.trace.iterations.iter().map(|r| r.selected.len()).collect();
        let expected: Vec<usize> = (1..=k).map(|i| subset_size(i, k, 8, true)).collect();
        assert_eq!(sizes, expected);
    }
}

#[test]
fn unweighted_full_page_ablation() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let mut m = f.model.clone();
    let cfg = AdaptationConfig {
        progressive: false,
        reweight: false,
        ..AdaptationConfig::default()
    };
    let out = adapt_page(&mut m, &f.pages[0].images(), &scorer, &f.vocab, &decoder(), &cfg).unwrap();
    assert!(out.trace.iterations.iter().all(|r| r.selected.len() == 8));
}

#[test]
fn guard_reverts_exactly_past_threshold() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let mut reverted_any = false;
    let mut kept_any = false;
    for threshold in [0.0, 0.3, 0.75, 10.0] {
        for page in &f.pages {
            let mut m = f.model.clone();
            let cfg = AdaptationConfig {
                learning_rate: 0.05,
                divergence_threshold: threshold,
                ..AdaptationConfig::default()
            };
            let out = adapt_page(&mut m, &page.images(), &scorer, &f.vocab, &decoder(), &cfg).unwrap();
            let t = &out.trace;
            for i in 0..8 {
                let back = ned(&t.initial_predictions[i], &t.final_predictions[i]) > threshold;
                assert_eq!(t.reverted[i], back);
                let want = if back { &t.initial_predictions[i] } else { &t.final_predictions[i] };
                assert_eq!(&t.emitted[i], want);
                assert_eq!(&out.predictions[i], want);
                reverted_any |= back && t.initial_predictions[i] != t.final_predictions[i];
                kept_any |= !back && t.initial_predictions[i] != t.final_predictions[i];
            }
        }
    }
    assert!(reverted_any && kept_any, "fixture should exercise both guard branches");
}

#[test]
fn guard_examples() {
    assert!(!guard("abcd", "abcd", 0.75));
    assert!(!guard("abcd", "abxy", 0.75));
    assert!(guard("abcd", "wxyz", 0.75));
    assert!(guard("ab", "abcdef", 0.75));
    // 3/4 is not strictly greater than the threshold
    assert!(!guard("abcd", "axyz", 0.75));
}

#[test]
fn reset_then_adapt_matches_fresh_model() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let ck = Checkpoint::new(&f.model, &f.vocab, "");
    let cfg = AdaptationConfig::default();
    let (a, b) = (f.pages[0].images(), f.pages[1].images());

    let mut m = ck.model.clone();
    let mut opt = OptimizerState::new(&m, cfg.learning_rate, cfg.momentum);
    adapt_page(&mut m, &a, &scorer, &f.vocab, &decoder(), &cfg).unwrap();
    assert_ne!(m, ck.model);
    ck.reset_to(&mut m, &mut opt);
    assert_eq!(m, ck.model);
    let after_reset = adapt_page(&mut m, &b, &scorer, &f.vocab, &decoder(), &cfg).unwrap();

    let fresh_ck = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let mut fresh = fresh_ck.model.clone();
    let direct = adapt_page(&mut fresh, &b, &scorer, &f.vocab, &decoder(), &cfg).unwrap();
    assert_eq!(after_reset.trace.to_json(), direct.trace.to_json());
    assert_eq!(m, fresh);
}

#[test]
fn frozen_labels_and_ctc_confidence_run() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let mut m = f.model.clone();
    let cfg = AdaptationConfig {
        freeze_self_labels: true,
        confidence_kind: ConfidenceKind::NormalizedCtcLoss,
        lm_in_loop: false,
        ..AdaptationConfig::default()
    };
    let out = adapt_page(&mut m, &f.pages[0].images(), &scorer, &f.vocab, &decoder(), &cfg).unwrap();
    let first = &out.trace.iterations[0];
    for r in &out.trace.iterations {
        assert_eq!(r.self_labels, first.self_labels);
        assert_eq!(r.confidences, first.confidences);
        assert!(r.confidences.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn rejects_bad_input() {
    let f = fixture();
    let scorer = CharLmScorer::new(&f.lm, &f.vocab);
    let mut m = f.model.clone();
    assert!(adapt_page(&mut m, &[], &scorer, &f.vocab, &decoder(), &AdaptationConfig::default()).is_err());
    let cfg = AdaptationConfig {
        iterations: 0,
        ..AdaptationConfig::default()
    };
    assert!(adapt_page(&mut m, &f.pages[0].images(), &scorer, &f.vocab, &decoder(), &cfg).is_err());
    assert_eq!(m, f.model);
}
