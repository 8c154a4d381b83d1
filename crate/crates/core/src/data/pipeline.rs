use ftseg_nn::Tensor;

use super::{augment_keyed, normalize, resize, AugmentationConfig, DataError, Normalization, Sample};

/// Resize, per-epoch augmentation and normalization for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub size: usize,
    pub augmentation: AugmentationConfig,
    pub normalization: Normalization,
    pub seed: u64,
}

/// Network-ready mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `B x 3 x S x S`, normalized.
    pub images: Tensor<f32>,
    /// `B x 1 x S x S`, values 0 or 1.
    pub masks: Tensor<f32>,
}

impl Pipeline {
    /// Resizes every sample to the pipeline size (done once, before training).
    pub fn prepare(&self, samples: &[Sample]) -> Result<Vec<Sample>, DataError> {
        samples
            .iter()
            .map(|s| {
                if s.image.width() == self.size && s.image.height() == self.size {
                    Ok(s.clone())
                } else {
                    resize(s, self.size)
                }
            })
            .collect()
    }

    /// Builds a batch. With `epoch = Some(e)` and augmentation enabled, each
    /// sample gets the transform keyed by `(seed, id, e)`; `None` means
    /// evaluation (no augmentation).
    pub fn batch(&self, samples: &[&Sample], epoch: Option<usize>) -> Result<Batch, DataError> {
        let s = self.size;
        let plane = s * s;
        let mut images = Vec::with_capacity(samples.len() * 3 * plane);
        let mut masks = Vec::with_capacity(samples.len() * plane);
        let mut ids = Vec::with_capacity(samples.len());
        for &sample in samples {
            let sized;
            let mut sample = if sample.image.width() == s && sample.image.height() == s {
                sample
            } else {
                sized = resize(sample, s)?;
                &sized
            };
            let augmented;
            if let (Some(e), true) = (epoch, self.augmentation.enabled) {
                augmented = augment_keyed(sample, &self.augmentation, self.seed, e).0;
                sample = &augmented;
            }
            images.extend(normalize(&sample.image, self.normalization)?);
            masks.extend(sample.mask.data().iter().map(|&m| f32::from(m)));
            ids.push(sample.id.clone());
        }
        let b = samples.len();
        Ok(Batch {
            ids,
            images: Tensor::from_vec([b, 3, s, s], images),
            masks: Tensor::from_vec([b, 1, s, s], masks),
        })
    }
}
