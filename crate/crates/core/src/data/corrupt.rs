//! Image corruption suite modelled on common-corruption robustness benchmarks,
//! reduced to eight grayscale kinds. Distortion strength per severity comes from the
//! versioned table in `assets/corruption_severity.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::LineImage;
use super::{mix_seed, DataError};

pub const SEVERITY_TABLE_JSON: &str = include_str!("../../assets/corruption_severity.json");
pub const SEVERITY_TABLE_VERSION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    GaussianNoise,
    ImpulseNoise,
    BoxBlur,
    GlassBlurLite,
    Contrast,
    Brightness,
    Pixelate,
    Quantize,
}

impl Corruption {
    pub const ALL: [Corruption; 8] = [
        Corruption::GaussianNoise,
        Corruption::ImpulseNoise,
        Corruption::BoxBlur,
        Corruption::GlassBlurLite,
        Corruption::Contrast,
        Corruption::Brightness,
        Corruption::Pixelate,
        Corruption::Quantize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::GaussianNoise => "gaussian_noise",
            Corruption::ImpulseNoise => "impulse_noise",
            Corruption::BoxBlur => "box_blur",
            Corruption::GlassBlurLite => "glass_blur_lite",
            Corruption::Contrast => "contrast",
            Corruption::Brightness => "brightness",
            Corruption::Pixelate => "pixelate",
            Corruption::Quantize => "quantize",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corruption {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DataError::BadCorruption(s.to_string()))
    }
}

/// A corruption kind at a severity in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorruptionKind {
    pub kind: Corruption,
    pub severity: u8,
}

impl CorruptionKind {
    pub fn new(kind: Corruption, severity: u8) -> Result<Self, DataError> {
        if !(1..=5).contains(&severity) {
            return Err(DataError::BadCorruption(format!("severity {severity} not in 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    /// Parses `kind` or `kind:severity` (default severity 3).
    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s.split_once(':') {
            Some((k, sev)) => {
                let sev = sev
                    .parse()
                    .map_err(|_| DataError::BadCorruption(s.to_string()))?;
                Self::new(k.parse()?, sev)
            }
            None => Self::new(s.parse()?, 3),
        }
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.kind, self.severity)
    }

    pub fn params(&self) -> &'static [f64] {
        &severity_table().kinds[&self.kind][self.severity as usize - 1]
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.severity)
    }
}

#[derive(Debug, Deserialize)]
pub struct SeverityTable {
    pub version: u32,
    pub kinds: BTreeMap<Corruption, Vec<Vec<f64>>>,
}

pub fn severity_table() -> &'static SeverityTable {
    static TABLE: OnceLock<SeverityTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t: SeverityTable =
            serde_json::from_str(SEVERITY_TABLE_JSON).expect("bundled severity table parses");
        assert_eq!(t.version, SEVERITY_TABLE_VERSION, "severity table version");
        for k in Corruption::ALL {
            assert_eq!(t.kinds.get(&k).map(Vec::len), Some(5), "{k} needs five severities");
        }
        t
    })
}

/// Corrupts `image` at the tabulated strength. Deterministic in `seed`; dimensions
/// are preserved.
pub fn corrupt(image: &LineImage, kind: CorruptionKind, seed: u64) -> LineImage {
    apply(image, kind.kind, kind.params(), mix_seed(seed, kind.kind.tag()))
}

/// Applies a corruption with explicit parameters (see the severity table for their
/// meaning per kind).
pub fn apply(image: &LineImage, kind: Corruption, params: &[f64], seed: u64) -> LineImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = params[0];
    match kind {
        Corruption::GaussianNoise => {
            let n = Normal::new(0.0, p.max(f64::MIN_POSITIVE)).expect("finite sigma");
            image.map_pixels_rng(&mut rng, |v, rng| {
                let x = v as f64 / 255.0 + n.sample(rng);
                to_byte(x * 255.0)
            })
        }
        Corruption::ImpulseNoise => image.map_pixels_rng(&mut rng, |v, rng| {
            if rng.random_bool(p) {
                if rng.random_bool(0.5) {
                    0
                } else {
                    255
                }
            } else {
                v
            }
        }),
        Corruption::BoxBlur => box_blur(image, p),
        Corruption::GlassBlurLite => {
            let fraction = params.get(1).copied().unwrap_or(1.0);
            glass_blur(image, p as isize, fraction, &mut rng)
        }
        Corruption::Contrast => {
            let mean = image.pixels().iter().map(|&v| v as f64).sum::<f64>()
                / image.pixels().len() as f64;
            image.map_pixels(|v| to_byte((v as f64 - mean) * p + mean))
        }
        Corruption::Brightness => image.map_pixels(|v| to_byte(v as f64 + p * 255.0)),
        Corruption::Pixelate => pixelate(image, p),
        Corruption::Quantize => {
            let levels = (p as usize).max(2) as f64 - 1.0;
            image.map_pixels(|v| to_byte((v as f64 / 255.0 * levels).round() / levels * 255.0))
        }
    }
}

fn to_byte(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

impl LineImage {
    fn map_pixels_rng(
        &self,
        rng: &mut ChaCha8Rng,
        mut f: impl FnMut(u8, &mut ChaCha8Rng) -> u8,
    ) -> LineImage {
        let mut out = self.clone();
        for v in out.pixels_mut() {
            *v = f(*v, rng);
        }
        out
    }
}

/// Box filter with fractional radius: full weight up to `floor(r)`, the fractional
/// remainder on the next ring. Separable, edges replicated.
fn box_blur(image: &LineImage, radius: f64) -> LineImage {
    let full = radius.floor() as isize;
    let frac = radius - radius.floor();
    let mut weights: Vec<(isize, f64)> = (-full..=full).map(|d| (d, 1.0)).collect();
    if frac > 0.0 {
        weights.push((-full - 1, frac));
        weights.push((full + 1, frac));
    }
    let norm: f64 = weights.iter().map(|w| w.1).sum();
    let (w, h) = (image.width(), image.height());
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = weights
                .iter()
                .map(|&(d, k)| k * image.get_clamped(x as isize + d, y as isize) as f64)
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let v = weights
                .iter()
                .map(|&(d, k)| {
                    let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                    k * tmp[yy * w + x]
                })
                .sum::<f64>()
                / norm;
            out.set(x, y, to_byte(v));
        }
    }
    out
}

/// Local pixel shuffling: each interior pixel swaps with a random neighbour at most
/// `d` away, repeated `iterations` times.
/// Each pixel, with probability `fraction`, takes the value of a random
/// neighbor within `d` pixels.
fn glass_blur(image: &LineImage, d: isize, fraction: f64, rng: &mut ChaCha8Rng) -> LineImage {
    let mut out = image.clone();
    if d <= 0 || fraction <= 0.0 {
        return out;
    }
    let (w, h) = (image.width(), image.height());
    for y in 0..h {
        for x in 0..w {
            let hit = rng.random::<f64>() < fraction;
            let dx = rng.random_range(-d as i64..=d as i64) as isize;
            let dy = rng.random_range(-d as i64..=d as i64) as isize;
            if hit {
                out.set(x, y, image.get_clamped(x as isize + dx, y as isize + dy));
            }
        }
    }
    out
}

/// Replaces each `factor x factor` block (on a fractional grid) by its mean.
fn pixelate(image: &LineImage, factor: f64) -> LineImage {
    let factor = factor.max(1.0);
    let (w, h) = (image.width(), image.height());
    let bw = (w as f64 / factor).ceil() as usize;
    let bh = (h as f64 / factor).ceil() as usize;
    let block = |i: usize, n: usize| ((i as f64 / factor).floor() as usize).min(n - 1);
    let mut sum = vec![0.0; bw * bh];
    let mut cnt = vec![0usize; bw * bh];
    for y in 0..h {
        for x in 0..w {
            let b = block(y, bh) * bw + block(x, bw);
            sum[b] += image.get(x, y) as f64;
            cnt[b] += 1;
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let b = block(y, bh) * bw + block(x, bw);
            out.set(x, y, to_byte(sum[b] / cnt[b] as f64));
        }
    }
    out
}
