use super::{DataError, Normalization, Raster};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Grayscale `[0, 255]` image to a 3-channel planar (`C x H x W`) buffer.
pub fn normalize(image: &Raster<f32>, mode: Normalization) -> Result<Vec<f32>, DataError> {
    if let Some(&value) = image.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(DataError::OutOfRange { value });
    }
    let plane = image.data().len();
    let mut out = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        match mode {
            Normalization::UnitRange => out.extend(image.data().iter().map(|&v| v / 255.0)),
            Normalization::ImagenetStats => {
                let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
                out.extend(image.data().iter().map(|&v| (v / 255.0 - m) / s));
            }
        }
    }
    Ok(out)
}
