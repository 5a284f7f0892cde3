//! Light image augmentations and prediction-stability confidence.

use serde::{Deserialize, Serialize};

use crate::data::LineImage;
use crate::decoder::{decode_top1, DecoderConfig, PrefixScorer};
use crate::optical::{OpticalError, OpticalModel};
use crate::textcore::ned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    #[serde(rename = "mean_filter_3x3")]
    MeanFilter3x3,
    #[serde(rename = "median_filter_3x3")]
    MedianFilter3x3,
    Sharpness,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 3] = [
        AugmentationKind::MeanFilter3x3,
        AugmentationKind::MedianFilter3x3,
        AugmentationKind::Sharpness,
    ];
}

/// Unsharp-mask strength for [`AugmentationKind::Sharpness`].
pub const SHARPNESS_LAMBDA: f64 = 1.0;

fn neighborhood(image: &LineImage, x: usize, y: usize) -> [u8; 9] {
    let mut out = [0u8; 9];
    let mut k = 0;
    for dy in -1..=1 {
        for dx in -1..=1 {
            out[k] = image.get_clamped(x as isize + dx, y as isize + dy);
            k += 1;
        }
    }
    out
}

fn mean3x3(image: &LineImage) -> Vec<f64> {
    let mut out = Vec::with_capacity(image.pixels().len());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let s: u32 = neighborhood(image, x, y).iter().map(|&v| v as u32).sum();
            out.push(s as f64 / 9.0);
        }
    }
    out
}

fn from_values(image: &LineImage, values: impl Iterator<Item = f64>) -> LineImage {
    let pixels = values.map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    LineImage::new(image.width(), image.height(), pixels).expect("same dimensions")
}

/// Deterministic 3×3 filters with edge replication; sharpness is an unsharp
/// mask `img + λ·(img − mean3x3(img))`.
pub fn augment(image: &LineImage, kind: AugmentationKind) -> LineImage {
    match kind {
        AugmentationKind::MeanFilter3x3 => from_values(image, mean3x3(image).into_iter()),
        AugmentationKind::MedianFilter3x3 => {
            let mut vals = Vec::with_capacity(image.pixels().len());
            for y in 0..image.height() {
                for x in 0..image.width() {
                    let mut n = neighborhood(image, x, y);
                    n.sort_unstable();
                    vals.push(n[4] as f64);
                }
            }
            from_values(image, vals.into_iter())
        }
        AugmentationKind::Sharpness => {
            let blur = mean3x3(image);
            let vals = image
                .pixels()
                .iter()
                .zip(blur)
                .map(|(&p, b)| p as f64 + SHARPNESS_LAMBDA * (p as f64 - b));
            from_values(image, vals)
        }
    }
}

/// How per-augmentation distances combine into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Worst case over augmentations.
    Max,
}

/// `clamp(1 − agg_a NED(p, p̂_a), 0, 1)`, NED normalized by `p`.
pub fn confidence_from_predictions<S: AsRef<str>>(
    prediction: &str,
    augmented: &[S],
    aggregation: Aggregation,
) -> f64 {
    if augmented.is_empty() {
        return 1.0;
    }
    let d = augmented.iter().map(|a| ned(prediction, a.as_ref()));
    let agg = match aggregation {
        Aggregation::Mean => d.sum::<f64>() / augmented.len() as f64,
        Aggregation::Max => d.fold(0.0, f64::max),
    };
    (1.0 - agg).clamp(0.0, 1.0)
}

/// Confidence of the model's top-1 on `image` under the three augmentations.
pub fn line_confidence<S: PrefixScorer + ?Sized>(
    model: &OpticalModel,
    scorer: &S,
    vocab: &crate::textcore::Vocabulary,
    config: &DecoderConfig,
    image: &LineImage,
) -> Result<f64, OpticalError> {
    let decode = |img: &LineImage| -> Result<String, OpticalError> {
        let label = decode_top1(&model.forward(img)?, scorer, config);
        Ok(vocab.decode(&label).expect("decoder emits vocabulary labels"))
    };
    let p = decode(image)?;
    let aug = AugmentationKind::ALL
        .iter()
        .map(|&k| decode(&augment(image, k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(confidence_from_predictions(&p, &aug, Aggregation::Mean))
}
