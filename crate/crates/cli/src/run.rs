//! Running one adaptation method over pages of a test set.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use ttaline::confidence::line_confidence;
use ttaline::data::dataset::fingerprint;
use ttaline::data::{mix_seed, LineImage, Page};
use ttaline::decoder::{beam_search, Candidate, CharLmScorer, DecoderConfig};
use ttaline::lm::{CharNGramModel, WordNGramModel};
use ttaline::optical::{Checkpoint, OpticalModel};
use ttaline::rescore::{rescore, RescoreConfig};
use ttaline::textcore::Vocabulary;
use ttaline::tta::{adapt_bn, adapt_entropy, adapt_page, adapt_ptn, AdaptationConfig, AdaptationTrace};

use crate::error::{CliError, Result};
use crate::layout::{
    LinePrediction, PagePredictions, PageStatus, PredictionFile, CHAR_LM_FILE, CHECKPOINT_FILE, VOCAB_FILE,
    WORD_LM_FILE,
};

/// Trained artifacts loaded from a model directory.
pub struct Resources {
    pub checkpoint: Checkpoint,
    pub vocab: Vocabulary,
    pub char_lm: CharNGramModel,
    pub word_lm: WordNGramModel,
}

impl Resources {
    pub fn load(model_dir: &Path) -> Result<Self> {
        for f in [CHECKPOINT_FILE, VOCAB_FILE, CHAR_LM_FILE, WORD_LM_FILE] {
            let p = model_dir.join(f);
            if !p.exists() {
                return Err(CliError::usage(format!("{} does not exist", p.display())));
            }
        }
        let vocab = Vocabulary::load(&model_dir.join(VOCAB_FILE))?;
        let checkpoint = Checkpoint::load(&model_dir.join(CHECKPOINT_FILE), &vocab)
            .map_err(|e| CliError::data(e.to_string()))?;
        Ok(Self {
            checkpoint,
            char_lm: CharNGramModel::load(&model_dir.join(CHAR_LM_FILE))?,
            word_lm: WordNGramModel::load(&model_dir.join(WORD_LM_FILE))?,
            vocab,
        })
    }

    pub fn scorer(&self) -> CharLmScorer<'_> {
        CharLmScorer::new(&self.char_lm, &self.vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Source model, no adaptation.
    Source,
    /// Convex combination of source and page normalization statistics.
    Bn,
    /// Page normalization statistics replace the source ones.
    Ptn,
    /// Entropy minimization over the normalization affine parameters.
    Entropy,
    /// Progressive confidence-weighted self-training.
    Ours,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Source, Method::Bn, Method::Ptn, Method::Entropy, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Source => "source",
            Method::Bn => "bn",
            Method::Ptn => "ptn",
            Method::Entropy => "entropy",
            Method::Ours => "ours",
        }
    }
}

/// A fully specified way of producing predictions for a page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub adaptation: AdaptationConfig,
    pub decoder: DecoderConfig,
    pub rescore: RescoreConfig,
    pub bn_rho: f64,
    /// Record the augmentation-NED confidence of every emitted line.
    pub confidence: bool,
}

impl RunSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            adaptation: AdaptationConfig::default(),
            decoder: DecoderConfig::default(),
            rescore: RescoreConfig::default(),
            bn_rho: 0.5,
            confidence: true,
        }
    }

    /// Method id used for run directories and report rows.
    pub fn label(&self) -> String {
        let mut s = self.method.name().to_string();
        if self.method == Method::Ours && !self.adaptation.lm_in_loop {
            s.push_str("-no-lm");
        }
        if self.rescore.enabled {
            s.push_str("+rescore");
        }
        s
    }
}

pub struct PageRun {
    pub predictions: PagePredictions,
    pub trace: Option<AdaptationTrace>,
    /// Decoder top-k per line of the model state that produced the output.
    pub candidates: Vec<Vec<Candidate>>,
}

fn decode_lines(res: &Resources, model: &OpticalModel, images: &[LineImage], decoder: &DecoderConfig) -> Result<Vec<Vec<Candidate>>> {
    let scorer = res.scorer();
    images
        .iter()
        .map(|img| Ok(beam_search(&model.forward(img)?, &scorer, decoder)))
        .collect()
}

fn text_of(res: &Resources, c: Option<&Candidate>) -> String {
    c.map(|c| res.vocab.decode(&c.text).expect("decoder emits vocabulary labels"))
        .unwrap_or_default()
}

fn run_page_inner(res: &Resources, spec: &RunSpec, page: &Page, seed: u64) -> Result<PageRun> {
    let mut model = res.checkpoint.model.clone();
    let images = page.images();
    let mut adaptation = spec.adaptation;
    adaptation.seed = mix_seed(seed, fingerprint(&page.page_id));
    let (candidates, trace) = match spec.method {
        Method::Source => (decode_lines(res, &model, &images, &spec.decoder)?, None),
        Method::Bn => {
            adapt_bn(&mut model, &images, spec.bn_rho)?;
            (decode_lines(res, &model, &images, &spec.decoder)?, None)
        }
        Method::Ptn => {
            adapt_ptn(&mut model, &images)?;
            (decode_lines(res, &model, &images, &spec.decoder)?, None)
        }
        Method::Entropy => {
            adapt_entropy(&mut model, &images, &adaptation)?;
            (decode_lines(res, &model, &images, &spec.decoder)?, None)
        }
        Method::Ours => {
            let out = adapt_page(&mut model, &images, &res.scorer(), &res.vocab, &spec.decoder, &adaptation)?;
            (out.candidates, Some(out.trace))
        }
    };
    let scorer = res.scorer();
    let mut lines = Vec::with_capacity(images.len());
    for (i, cands) in candidates.iter().enumerate() {
        let pick = rescore(cands, &res.vocab, &res.word_lm, &spec.rescore);
        let confidence = if spec.confidence {
            Some(line_confidence(&model, &scorer, &res.vocab, &spec.decoder, &images[i])?)
        } else {
            None
        };
        lines.push(LinePrediction {
            prediction: text_of(res, cands.get(pick)),
            decoder_top1: text_of(res, cands.first()),
            confidence,
        });
    }
    Ok(PageRun {
        predictions: PagePredictions {
            page_id: page.page_id.clone(),
            status: PageStatus::Ok,
            error: None,
            lines,
        },
        trace,
        candidates,
    })
}

/// Adapts a fresh copy of the source model to `page` and decodes it. Errors and
/// panics are caught and reported as a failed page.
pub fn run_page(res: &Resources, spec: &RunSpec, page: &Page, seed: u64) -> PageRun {
    let outcome = catch_unwind(AssertUnwindSafe(|| run_page_inner(res, spec, page, seed)));
    let error = match outcome {
        Ok(Ok(run)) => return run,
        Ok(Err(e)) => e.to_string(),
        Err(panic) => panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "page processing panicked".into()),
    };
    log::warn!("page {} failed: {error}", page.page_id);
    PageRun {
        predictions: PagePredictions {
            page_id: page.page_id.clone(),
            status: PageStatus::Failed,
            error: Some(error),
            lines: Vec::new(),
        },
        trace: None,
        candidates: Vec::new(),
    }
}

pub struct SetRun {
    pub file: PredictionFile,
    pub traces: Vec<(String, AdaptationTrace)>,
    pub candidates: Vec<Vec<Vec<Candidate>>>,
    pub seconds: f64,
}

/// Runs `spec` on every page of a set, each page starting from the source model.
pub fn run_set(res: &Resources, spec: &RunSpec, label: &str, set: &str, pages: &[Page], seed: u64) -> SetRun {
    let start = std::time::Instant::now();
    let mut out = Vec::with_capacity(pages.len());
    let mut traces = Vec::new();
    let mut candidates = Vec::with_capacity(pages.len());
    for page in pages {
        let run = run_page(res, spec, page, seed);
        if let Some(t) = run.trace {
            traces.push((page.page_id.clone(), t));
        }
        candidates.push(run.candidates);
        out.push(run.predictions);
    }
    SetRun {
        file: PredictionFile {
            method: label.to_string(),
            set: set.to_string(),
            seed,
            run: serde_json::to_value(spec).expect("run specs serialize"),
            pages: out,
        },
        traces,
        candidates,
        seconds: start.elapsed().as_secs_f64(),
    }
}
