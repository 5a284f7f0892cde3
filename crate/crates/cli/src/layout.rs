//! On-disk layout of generated data, trained models and run outputs.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ttaline::data::{load_pages, Page};

use crate::error::{CliError, Result};

pub const INDEX_FILE: &str = "index.json";
pub const LM_CORPUS_FILE: &str = "lm_corpus.txt";
pub const CLEAN_SET: &str = "clean";

pub const CHECKPOINT_FILE: &str = "source.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHAR_LM_FILE: &str = "char.lm";
pub const WORD_LM_FILE: &str = "word.lm";
pub const LOSS_FILE: &str = "loss.csv";
pub const TIMING_FILE: &str = "timing.json";

/// Written by `gen-data` at the root of the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataIndex {
    pub seed: u64,
    pub corpus_lines: usize,
    /// Lines taken from the head of the corpus for the test split.
    pub test_lines: usize,
    pub train_lines: usize,
    pub lm_lines: usize,
    pub train_writers: usize,
    pub test_writers: usize,
    pub pages_per_writer: usize,
    pub lines_per_page: usize,
    pub severity: u8,
    pub severity_table_version: u32,
    /// `clean` followed by one corrupted variant per corruption id.
    pub test_sets: Vec<String>,
}

impl DataIndex {
    pub fn load(data_dir: &Path) -> Result<Self> {
        let path = data_dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn corrupted_sets(&self) -> Vec<String> {
        self.test_sets.iter().filter(|s| *s != CLEAN_SET).cloned().collect()
    }

    /// `requested` filtered against the index, or every set when empty.
    pub fn select(&self, requested: &[String]) -> Result<Vec<String>> {
        if requested.is_empty() {
            return Ok(self.test_sets.clone());
        }
        for r in requested {
            if !self.test_sets.contains(r) {
                return Err(CliError::usage(format!(
                    "unknown test set {r:?}; available: {}",
                    self.test_sets.join(", ")
                )));
            }
        }
        Ok(requested.to_vec())
    }
}

pub fn train_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("train")
}

pub fn test_set_dir(data_dir: &Path, set: &str) -> PathBuf {
    data_dir.join("test").join(set)
}

pub fn load_test_set(data_dir: &Path, set: &str) -> Result<Vec<Page>> {
    Ok(load_pages(&test_set_dir(data_dir, set))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePrediction {
    /// Emitted text, after re-scoring when enabled.
    pub prediction: String,
    /// Top-1 of the decoder before re-scoring.
    pub decoder_top1: String,
    /// Augmentation-NED confidence of the adapted model on this line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePredictions {
    pub page_id: String,
    pub status: PageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub lines: Vec<LinePrediction>,
}

/// Output of one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub method: String,
    pub set: String,
    pub seed: u64,
    pub run: serde_json::Value,
    pub pages: Vec<PagePredictions>,
}

impl PredictionFile {
    pub fn path(runs_dir: &Path, method: &str, set: &str) -> PathBuf {
        runs_dir.join(method).join(format!("{set}.json"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn failed_pages(&self) -> usize {
        self.pages.iter().filter(|p| p.status == PageStatus::Failed).count()
    }
}

pub fn trace_path(runs_dir: &Path, method: &str, set: &str, page_id: &str) -> PathBuf {
    runs_dir.join(method).join("traces").join(set).join(format!("{page_id}.json"))
}

/// Pretty JSON with a trailing newline; creates parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// SHA-256 over the relative paths and contents of every file below `dir`,
/// visited in sorted order. Files named in `skip` are left out.
pub fn dir_digest(dir: &Path, skip: &[&str]) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        if skip.iter().any(|s| rel.ends_with(s)) {
            continue;
        }
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(std::fs::read(dir.join(&rel))?);
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        write!(out, "{b:02x}").expect("writing to a string");
    }
    Ok(out)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays below the root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
