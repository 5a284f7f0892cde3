use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corrupt::{corrupt, CorruptionKind};
use super::manifest::{write_page, Page, PageLine};
use super::render::render_line;
use super::writer::{gen_writer_with, StyleRanges};
use super::{mix_seed, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn bit(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_writers: usize,
    pub pages_per_writer: usize,
    pub lines_per_page: usize,
    pub styles: StyleRanges,
}

impl DatasetSpec {
    pub fn lines_needed(&self) -> usize {
        self.n_writers * self.pages_per_writer * self.lines_per_page
    }
}

/// Writer seed for split-local writer `index`. The low bit encodes the split, so
/// train and test writers never share a seed.
pub fn writer_seed(seed: u64, split: Split, index: usize) -> u64 {
    (mix_seed(seed, index as u64) << 1) | split.bit()
}

/// Renders `corpus` lines (consumed in order) into pages, one writer per page.
pub fn gen_pages<S: AsRef<str>>(
    corpus: &[S],
    split: Split,
    spec: &DatasetSpec,
    seed: u64,
) -> Result<Vec<Page>, DataError> {
    if corpus.is_empty() {
        return Err(DataError::InsufficientCorpus { needed: 1, available: 0 });
    }
    let needed = spec.lines_needed();
    if corpus.len() < needed {
        return Err(DataError::InsufficientCorpus {
            needed,
            available: corpus.len(),
        });
    }
    let mut pages = Vec::with_capacity(spec.n_writers * spec.pages_per_writer);
    let mut next = 0;
    for w in 0..spec.n_writers {
        let wseed = writer_seed(seed, split, w);
        let mut style = gen_writer_with(wseed, &spec.styles);
        style.writer_id = format!("{}-w{:03}", split.name(), w);
        for p in 0..spec.pages_per_writer {
            let mut lines = Vec::with_capacity(spec.lines_per_page);
            for l in 0..spec.lines_per_page {
                let text = corpus[next].as_ref().to_string();
                next += 1;
                let image = render_line(&text, &style, (p * 1000 + l) as u64)?;
                lines.push(PageLine {
                    image,
                    text,
                    writer_id: style.writer_id.clone(),
                });
            }
            pages.push(Page {
                page_id: format!("{}-p{:02}", style.writer_id, p),
                writer_id: style.writer_id.clone(),
                lines,
            });
        }
    }
    Ok(pages)
}

/// Reads a corpus file (one transcript per nonempty line), renders it with
/// [`gen_pages`] and writes one manifest per page into `out_dir`.
pub fn gen_dataset(
    corpus: &Path,
    split: Split,
    spec: &DatasetSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, DataError> {
    let text = std::fs::read_to_string(corpus)?;
    let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    std::fs::create_dir_all(out_dir)?;
    gen_pages(&lines, split, spec, seed)?
        .iter()
        .map(|p| write_page(p, out_dir))
        .collect()
}

/// Corrupted copy of a page. Each line's noise is keyed to (seed, page, line).
pub fn corrupt_page(page: &Page, kind: CorruptionKind, seed: u64) -> Page {
    let page_key = mix_seed(seed, fingerprint(&page.page_id));
    Page {
        page_id: page.page_id.clone(),
        writer_id: page.writer_id.clone(),
        lines: page
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| PageLine {
                image: corrupt(&l.image, kind, mix_seed(page_key, i as u64)),
                text: l.text.clone(),
                writer_id: l.writer_id.clone(),
            })
            .collect(),
    }
}

/// Stable 64-bit FNV-1a of a string, for deriving per-item seeds from ids.
pub fn fingerprint(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Redistributes all lines of `pages` into new pages of the same sizes, drawing
/// without replacement, so most pages mix several writers.
pub fn mix_pages(pages: &[Page], seed: u64) -> Result<Vec<Page>, DataError> {
    if pages.len() < 2 {
        return Err(DataError::BadManifest("mixing needs at least two pages".into()));
    }
    let mut pool: Vec<PageLine> = pages.iter().flat_map(|p| p.lines.iter().cloned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6d1e));
    pool.shuffle(&mut rng);
    let mut it = pool.into_iter();
    Ok(pages
        .iter()
        .enumerate()
        .map(|(i, p)| Page {
            page_id: format!("mix-p{i:03}"),
            writer_id: "mixed".into(),
            lines: it.by_ref().take(p.lines.len()).collect(),
        })
        .collect())
}
