//! Synthetic handwriting data: bitmap font rendering under per-writer styles, the
//! corruption suite, page manifests and the multi-writer page mixer.

pub mod corpus;
pub mod corrupt;
pub mod dataset;
pub mod font;
pub mod image;
pub mod manifest;
pub mod render;
pub mod writer;

pub use corrupt::{corrupt, Corruption, CorruptionKind};
pub use dataset::{corrupt_page, gen_dataset, gen_pages, mix_pages, DatasetSpec, Split};
pub use image::{LineImage, LINE_HEIGHT};
pub use manifest::{load_pages, write_page, Page, PageLine, PageManifest};
pub use render::render_line;
pub use writer::{gen_writer, StyleRanges, WriterStyle};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid image: {0}")]
    BadImage(String),
    #[error("symbol {0:?} has no glyph in the built-in font")]
    UnknownSymbol(char),
    #[error("invalid corruption: {0}")]
    BadCorruption(String),
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("corpus has {available} lines, {needed} needed")]
    InsufficientCorpus { needed: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// SplitMix64 finaliser over a pair of seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
