//! Synthetic writer styles.
//!
//! A writer has a handful of idiosyncratic glyphs: for each confusion pair
//! `from -> to`, the writer's `from` is drawn as a fixed cell-wise mixture of the
//! `from` and `to` bitmaps. The mixture is stable for the writer (same seed, same
//! shape), so it is learnable from one page, yet a recognizer trained on other
//! writers tends to read it as `to`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::font::{self, Glyph, GLYPH_COLS, GLYPH_ROWS};
use super::mix_seed;

/// Visually confusable pairs a writer may blur together.
pub const CONFUSABLE_PAIRS: [(char, char); 5] =
    [('o', 'a'), ('i', 'l'), ('n', 'r'), ('u', 'v'), ('e', 'c')];

pub const MAX_SLANT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleRanges {
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub p_conf: (f64, f64),
    pub blend: (f64, f64),
    pub slant: (f64, f64),
    pub thickness_prob: f64,
    pub jitter_sigma: (f64, f64),
}

impl Default for StyleRanges {
    fn default() -> Self {
        Self {
            min_pairs: 2,
            max_pairs: 4,
            p_conf: (0.7, 1.0),
            blend: (0.45, 0.75),
            slant: (-MAX_SLANT, MAX_SLANT),
            thickness_prob: 0.5,
            jitter_sigma: (0.0, 1.2),
        }
    }
}

impl StyleRanges {
    /// Milder hands for the training writers, so held-out writers carry styles
    /// the source model has not seen.
    pub fn source() -> Self {
        Self {
            p_conf: (0.3, 0.6),
            blend: (0.25, 0.5),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub from: char,
    pub to: char,
    /// Row-major mask over the 5x7 cell grid; `true` takes the cell from `to`.
    pub mask: Vec<bool>,
}

impl Confusion {
    pub fn glyph(&self) -> Glyph {
        let a = font::glyph(self.from).expect("confusion symbols come from the font");
        let b = font::glyph(self.to).expect("confusion symbols come from the font");
        let mut g = a;
        for y in 0..GLYPH_ROWS {
            for x in 0..GLYPH_COLS {
                if self.mask[y * GLYPH_COLS + x] {
                    g[y][x] = b[y][x];
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub writer_id: String,
    pub seed: u64,
    pub confusions: Vec<Confusion>,
    /// Probability that an occurrence of a confused symbol uses the writer's variant.
    pub p_conf: f64,
    /// Shear in radians, positive leans right.
    pub slant: f64,
    /// Dilation radius, 0 or 1.
    pub thickness: u8,
    /// Standard deviation of the per-glyph vertical offset, in pixels.
    pub jitter_sigma: f64,
}

impl WriterStyle {
    /// Plain reference rendering: no confusions, no slant, no dilation, no jitter.
    pub fn identity(writer_id: &str) -> Self {
        Self {
            writer_id: writer_id.to_string(),
            seed: 0,
            confusions: Vec::new(),
            p_conf: 0.0,
            slant: 0.0,
            thickness: 0,
            jitter_sigma: 0.0,
        }
    }

    pub fn confusion_for(&self, c: char) -> Option<&Confusion> {
        self.confusions.iter().find(|k| k.from == c)
    }
}

pub fn gen_writer(seed: u64) -> WriterStyle {
    gen_writer_with(seed, &StyleRanges::default())
}

pub fn gen_writer_with(seed: u64, ranges: &StyleRanges) -> WriterStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5717_1e));
    let n_pairs = if ranges.max_pairs == 0 {
        0
    } else {
        rng.random_range(ranges.min_pairs..=ranges.max_pairs.min(CONFUSABLE_PAIRS.len()))
    };
    let mut pool: Vec<usize> = (0..CONFUSABLE_PAIRS.len()).collect();
    let mut confusions = Vec::with_capacity(n_pairs);
    let blend = uniform(&mut rng, ranges.blend);
    for _ in 0..n_pairs {
        let idx = pool.swap_remove(rng.random_range(0..pool.len()));
        let (a, b) = CONFUSABLE_PAIRS[idx];
        let (from, to) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let mask = (0..GLYPH_ROWS * GLYPH_COLS)
            .map(|_| rng.random_bool(blend))
            .collect();
        confusions.push(Confusion { from, to, mask });
    }
    confusions.sort_by_key(|c| c.from);
    let p_conf = uniform(&mut rng, ranges.p_conf);
    let slant = uniform(&mut rng, ranges.slant).clamp(-MAX_SLANT, MAX_SLANT);
    let thickness = u8::from(rng.random_bool(ranges.thickness_prob));
    let jitter_sigma = uniform(&mut rng, ranges.jitter_sigma);
    WriterStyle {
        writer_id: format!("w{seed:016x}"),
        seed,
        confusions,
        p_conf,
        slant,
        thickness,
        jitter_sigma,
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub(crate) fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> i32 {
    if sigma <= 0.0 {
        return 0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    (n.sample(rng).round() as i32).clamp(-3, 3)
}
