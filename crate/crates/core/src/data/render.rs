use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::font::{self, Glyph, GLYPH_COLS, GLYPH_ROWS};
use super::image::{LineImage, LINE_HEIGHT, WHITE};
use super::writer::{jitter, WriterStyle};
use super::{mix_seed, DataError};

pub const SCALE_X: usize = 2;
pub const SCALE_Y: usize = 3;
pub const GLYPH_W: usize = GLYPH_COLS * SCALE_X;
pub const GLYPH_H: usize = GLYPH_ROWS * SCALE_Y;
pub const SPACING: usize = 2;
pub const PITCH: usize = GLYPH_W + SPACING;
pub const MARGIN: usize = 8;
/// Top row of an unjittered glyph cell.
pub const TOP: usize = (LINE_HEIGHT - GLYPH_H) / 2;
const BASELINE: f64 = (TOP + GLYPH_H - 1) as f64;
const INK: u8 = 0;

/// Width of the blank image rendered for empty text.
pub const MIN_WIDTH: usize = 2 * MARGIN;

fn shear_extent(slant: f64) -> usize {
    (slant.abs() * BASELINE).ceil() as usize
}

/// Renders `text` in the writer's hand. Deterministic in `(text, style, seed)`.
pub fn render_line(text: &str, style: &WriterStyle, seed: u64) -> Result<LineImage, DataError> {
    let chars: Vec<char> = text.chars().collect();
    if let Some(&bad) = chars.iter().find(|&&c| !font::has_glyph(c)) {
        return Err(DataError::UnknownSymbol(bad));
    }
    let extent = shear_extent(style.slant);
    let left = MARGIN + if style.slant < 0.0 { extent } else { 0 };
    let right = MARGIN + if style.slant > 0.0 { extent } else { 0 };
    let width = if chars.is_empty() {
        MIN_WIDTH
    } else {
        left + chars.len() * PITCH - SPACING + right
    };
    let mut ink = vec![false; width * LINE_HEIGHT];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(style.seed, seed));

    for (i, &c) in chars.iter().enumerate() {
        // the writer's variant is used with probability p_conf; draw even when no
        // confusion applies so the stream stays aligned with the text
        let roll: f64 = rng.random();
        let dy = jitter(&mut rng, style.jitter_sigma);
        let g: Glyph = match style.confusion_for(c) {
            Some(conf) if roll < style.p_conf => conf.glyph(),
            _ => font::glyph(c).expect("checked above"),
        };
        let x0 = (left + i * PITCH) as isize;
        let y0 = TOP as isize + dy as isize;
        for gy in 0..GLYPH_H {
            for gx in 0..GLYPH_W {
                if !g[gy / SCALE_Y][gx / SCALE_X] {
                    continue;
                }
                let y = y0 + gy as isize;
                let shift = (style.slant * (BASELINE - y as f64)).round() as isize;
                let x = x0 + gx as isize + shift;
                if (0..width as isize).contains(&x) && (0..LINE_HEIGHT as isize).contains(&y) {
                    ink[y as usize * width + x as usize] = true;
                }
            }
        }
    }

    if style.thickness > 0 {
        ink = dilate(&ink, width, LINE_HEIGHT, style.thickness as isize);
    }
    let pixels = ink.iter().map(|&on| if on { INK } else { WHITE }).collect();
    LineImage::new(width, LINE_HEIGHT, pixels)
}

fn dilate(ink: &[bool], w: usize, h: usize, r: isize) -> Vec<bool> {
    let mut out = vec![false; ink.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut on = false;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize
                        && ink[yy as usize * w + xx as usize]
                    {
                        on = true;
                        break 'scan;
                    }
                }
            }
            out[y as usize * w + x as usize] = on;
        }
    }
    out
}
