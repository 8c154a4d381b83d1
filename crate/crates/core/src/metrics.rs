//! Pixel accuracy, Dice and mean IoU for binary segmentation.

use std::collections::BTreeMap;

use ftseg_nn::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Pipeline, Sample};
use crate::net::{NetError, SegmentationNetwork};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction has {pred} pixels, ground truth {gt}")]
    ShapeMismatch { pred: usize, gt: usize },
    #[error("non-binary value {0} in mask")]
    NonBinary(u8),
    #[error("no pixels to evaluate")]
    Empty,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Pixel-wise counts for binary masks (values 0 or 1).
pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            (v, 0 | 1) | (_, v) => return Err(MetricError::NonBinary(v)),
        }
    }
    Ok(c)
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64, MetricError> {
    match c.total() {
        0 => Err(MetricError::Empty),
        t => Ok((c.tp + c.tn) as f64 / t as f64),
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2tp / (2tp + fp + fn)`; 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn foreground_iou(c: &ConfusionCounts) -> f64 {
    ratio_or_one(c.tp, c.tp + c.fp + c.fn_)
}

pub fn background_iou(c: &ConfusionCounts) -> f64 {
    ratio_or_one(c.tn, c.tn + c.fp + c.fn_)
}

/// IoU as an unreduced fraction; an empty union scores 1/1.
fn iou_parts(inter: u64, union: u64) -> (u128, u128) {
    if union == 0 {
        (1, 1)
    } else {
        (inter.into(), union.into())
    }
}

/// Mean of background and foreground IoU. The two fractions are summed over
/// a common denominator, so the result is correctly rounded whenever that
/// denominator is exactly representable.
pub fn miou(c: &ConfusionCounts) -> f64 {
    let (fn_, fd) = iou_parts(c.tp, c.tp + c.fp + c.fn_);
    let (bn, bd) = iou_parts(c.tn, c.tn + c.fp + c.fn_);
    let (num, den) = (fn_ * bd + bn * fd, 2 * fd * bd);
    if den < 1 << f64::MANTISSA_DIGITS {
        num as f64 / den as f64
    } else {
        (foreground_iou(c) + background_iou(c)) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool counts over all images, then compute each metric.
    #[default]
    Micro,
    /// Compute per image, then average.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pa: f64,
    pub dice: f64,
    pub miou: f64,
    pub per_class_iou: BTreeMap<String, f64>,
    pub n_images: usize,
    pub averaging: Averaging,
}

fn class_map(bg: f64, fg: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("background".to_string(), bg), ("foreground".to_string(), fg)])
}

/// Reduces per-image counts to a report.
pub fn report(per_image: &[ConfusionCounts], averaging: Averaging) -> Result<MetricReport, MetricError> {
    if per_image.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = per_image.len();
    match averaging {
        Averaging::Micro => {
            let mut c = ConfusionCounts::default();
            per_image.iter().for_each(|x| c.add(x));
            let (bg, fg) = (background_iou(&c), foreground_iou(&c));
            Ok(MetricReport {
                pa: pixel_accuracy(&c)?,
                dice: dice(&c),
                miou: miou(&c),
                per_class_iou: class_map(bg, fg),
                n_images: n,
                averaging,
            })
        }
        Averaging::Macro => {
            let mean = |f: &dyn Fn(&ConfusionCounts) -> f64| per_image.iter().map(f).sum::<f64>() / n as f64;
            let mut pa = 0.0;
            for c in per_image {
                pa += pixel_accuracy(c)?;
            }
            let (bg, fg) = (mean(&background_iou), mean(&foreground_iou));
            Ok(MetricReport {
                pa: pa / n as f64,
                dice: mean(&dice),
                miou: (bg + fg) / 2.0,
                per_class_iou: class_map(bg, fg),
                n_images: n,
                averaging,
            })
        }
    }
}

/// `sigmoid(logit) > threshold` as 0/1.
pub fn binarize(logits: &[f32], threshold: f64) -> Vec<u8> {
    logits
        .iter()
        .map(|&l| u8::from(1.0 / (1.0 + (-f64::from(l)).exp()) > threshold))
        .collect()
}

/// Per-image confusion counts of single-class logits against 0/1 masks.
pub fn batch_confusion(
    logits: &Tensor<f32>,
    masks: &Tensor<f32>,
    threshold: f64,
) -> Result<Vec<ConfusionCounts>, MetricError> {
    if logits.shape() != masks.shape() {
        return Err(MetricError::ShapeMismatch {
            pred: logits.len(),
            gt: masks.len(),
        });
    }
    (0..logits.batch())
        .map(|i| {
            let pred = binarize(logits.item(i), threshold);
            let gt: Vec<u8> = masks.item(i).iter().map(|&m| m as u8).collect();
            confusion(&pred, &gt)
        })
        .collect()
}

/// Runs inference over `samples` in batches and reports the three metrics.
pub fn evaluate(
    net: &SegmentationNetwork<f32>,
    samples: &[Sample],
    pipeline: &Pipeline,
    threshold: f64,
    averaging: Averaging,
    batch_size: usize,
) -> Result<MetricReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = pipeline.batch(&refs, None)?;
        let logits = net.forward(&batch.images)?;
        counts.extend(batch_confusion(&logits, &batch.masks, threshold)?);
    }
    report(&counts, averaging)
}
