//! Dataset ingestion, annotation filling, splitting, geometric
//! augmentation, normalization and synthetic phantoms.

mod augment;
mod fill;
mod hc18;
mod normalize;
mod phantom;
mod pipeline;
mod raster;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, augment_keyed, flip_horizontal, flip_vertical, rotate, AugmentDraw};
pub use fill::{fill_annotation, outline};
pub use hc18::{load_dataset, load_hc18, write_dataset, ANNOTATION_SUFFIX};
pub use normalize::{normalize, IMAGENET_MEAN, IMAGENET_STD};
pub use phantom::synthesize_phantoms;
pub use pipeline::{Batch, Pipeline};
pub use raster::{resize, resize_bilinear, resize_nearest, Raster};
pub use split::split;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset directory {0} contains no images")]
    Empty(PathBuf),
    #[error("images without annotation: {0:?}")]
    MissingAnnotation(Vec<String>),
    #[error("annotations without image: {0:?}")]
    OrphanAnnotation(Vec<String>),
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("annotation `{0}` is empty")]
    EmptyAnnotation(String),
    #[error("annotation `{0}` is not a closed contour")]
    OpenContour(String),
    #[error("split expects {expected} samples, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("size {0} is not a positive multiple of 32")]
    BadSize(usize),
    #[error("pixel value {value} outside [0, 255]")]
    OutOfRange { value: f32 },
    #[error("invalid phantom request: {0}")]
    InvalidPhantom(String),
    #[error("invalid augmentation config: {0}")]
    InvalidAugmentation(String),
}

/// One grayscale image with its binary mask (values 0 or 1).
///
/// Images hold intensities in `[0, 255]`. Samples returned by [`load_hc18`]
/// carry the raw outline in `mask` until passed through [`fill_annotation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster<f32>,
    pub mask: Raster<u8>,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub total: usize,
    pub train_count: usize,
    pub test_count: usize,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
}

fn default_split_seed() -> u64 {
    42
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            total: 999,
            train_count: 799,
            test_count: 200,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.train_count + self.test_count != self.total {
            return Err(DataError::InvalidSplit(format!(
                "train_count {} + test_count {} != total {}",
                self.train_count, self.test_count, self.total
            )));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(DataError::InvalidSplit("both parts must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by 255.
    UnitRange,
    /// Divide by 255, then standardize each channel with ImageNet statistics.
    ImagenetStats,
}

impl Normalization {
    /// ImageNet statistics for a pretrained encoder, plain rescaling otherwise.
    pub fn default_for(encoder_pretrained: bool) -> Self {
        if encoder_pretrained {
            Normalization::ImagenetStats
        } else {
            Normalization::UnitRange
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    /// Inclusive rotation interval in degrees.
    #[serde(default = "default_rotation")]
    pub rotation_degrees: [f64; 2],
    #[serde(default = "default_flip_prob")]
    pub hflip_prob: f64,
    #[serde(default = "default_flip_prob")]
    pub vflip_prob: f64,
    /// `None` picks [`Normalization::default_for`] the model.
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

fn default_enabled() -> bool {
    true
}

fn default_rotation() -> [f64; 2] {
    [-25.0, 25.0]
}

fn default_flip_prob() -> f64 {
    0.5
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_degrees: default_rotation(),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            normalization: None,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let [lo, hi] = self.rotation_degrees;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= -180.0 && hi <= 180.0) {
            return Err(DataError::InvalidAugmentation(format!(
                "rotation interval [{lo}, {hi}]"
            )));
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::InvalidAugmentation(format!("{name} = {p}")));
            }
        }
        Ok(())
    }
}
