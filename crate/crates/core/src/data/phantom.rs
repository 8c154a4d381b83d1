use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Raster, Sample};

const BACKGROUND: f64 = 30.0;
const INTERIOR: f64 = 70.0;
const RIM: f64 = 180.0;
const RIM_PIXELS: f64 = 2.5;

/// Mean-one multiplicative speckle (gamma with shape 4).
fn speckle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (0..4).map(|_| -(1.0 - rng.random::<f64>()).ln()).sum::<f64>() / 4.0
}

/// `n` speckled ellipse images of `size x size` with their filled masks.
///
/// Semi-axes are 15-40% of `size`, the pose is random and the ellipse lies
/// fully inside the frame. Sample `i` depends only on `(seed, i)`.
pub fn synthesize_phantoms(n: usize, seed: u64, size: usize) -> Result<Vec<Sample>, DataError> {
    if n == 0 {
        return Err(DataError::InvalidPhantom("n must be at least 1".into()));
    }
    if size == 0 || !size.is_multiple_of(32) {
        return Err(DataError::BadSize(size));
    }
    Ok((0..n).map(|i| phantom(seed, i, size)).collect())
}

fn phantom(seed: u64, index: usize, size: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let s = size as f64;
    let a = rng.random_range(0.15..=0.40) * s;
    let b = rng.random_range(0.15..=0.40) * s;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = theta.sin_cos();
    // half extents of the rotated bounding box
    let ex = (a * a * cos * cos + b * b * sin * sin).sqrt();
    let ey = (a * a * sin * sin + b * b * cos * cos).sqrt();
    let margin = 2.0;
    let cx = rng.random_range((ex + margin).min(s / 2.0)..=(s - ex - margin).max(s / 2.0));
    let cy = rng.random_range((ey + margin).min(s / 2.0)..=(s - ey - margin).max(s / 2.0));
    let rim = RIM_PIXELS / a.min(b);
    let tilt = rng.random_range(-0.3..0.3);

    let mut image = Raster::new(size, size);
    let mut mask = Raster::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = (cos * dx + sin * dy) / a;
            let v = (-sin * dx + cos * dy) / b;
            let r = (u * u + v * v).sqrt();
            let base = if (r - 1.0).abs() <= rim {
                RIM
            } else if r < 1.0 {
                INTERIOR
            } else {
                BACKGROUND * (1.0 + tilt * (y as f64 / s - 0.5))
            };
            let value = (base * speckle(&mut rng)).round().clamp(0.0, 255.0);
            image.set(x, y, value as f32);
            mask.set(x, y, u8::from(r <= 1.0));
        }
    }
    Sample {
        id: format!("phantom_{index:04}"),
        image,
        mask,
        split: None,
    }
}
