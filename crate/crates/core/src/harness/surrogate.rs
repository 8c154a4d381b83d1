use crate::archive::WeightArchive;
use crate::data::{synthesize_phantoms, AugmentationConfig, Normalization, Pipeline};
use crate::net::{SegmentationModelSpec, SegmentationNetwork};

use super::HarnessError;

const CALIBRATION_BATCH: usize = 4;
/// With momentum 0.1, 44 updates leave under 1% of the initial statistics.
const CALIBRATION_STEPS: usize = 44;

/// Seeded MobileNetV2 encoder with batch-norm running statistics estimated
/// on `images` phantoms, exported with canonical names.
///
/// Stands in for ImageNet weights when none are available: frozen stages
/// then normalize their activations instead of passing raw random-conv
/// outputs through identity statistics.
pub fn surrogate_encoder(seed: u64, images: usize, size: usize) -> Result<WeightArchive, HarnessError> {
    let spec = SegmentationModelSpec::mobilenet_v2(false)
        .with_seed(seed)
        .with_input_size(size);
    let mut net: SegmentationNetwork<f32> = SegmentationNetwork::build(&spec, None)?;
    let samples = synthesize_phantoms(images.max(1), seed ^ 0x5eed, size)?;
    // the surrogate replaces an ImageNet encoder, so it sees the same input scaling
    let pipeline = Pipeline {
        size,
        augmentation: AugmentationConfig::disabled(),
        normalization: Normalization::ImagenetStats,
        seed,
    };
    let batches = samples.len().div_ceil(CALIBRATION_BATCH).max(CALIBRATION_STEPS);
    for b in 0..batches {
        let refs: Vec<_> = (0..CALIBRATION_BATCH)
            .map(|j| &samples[(b * CALIBRATION_BATCH + j) % samples.len()])
            .collect();
        let batch = pipeline.batch(&refs, None)?;
        net.forward_train(&batch.images)?;
    }
    Ok(net.encoder_archive())
}
