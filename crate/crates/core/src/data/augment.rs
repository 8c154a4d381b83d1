use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AugmentationConfig, Raster, Sample};

/// The random choices behind one augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            hflip: false,
            vflip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> Self {
        let [lo, hi] = cfg.rotation_degrees;
        let angle_deg = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        Self {
            angle_deg,
            hflip: rng.random_bool(cfg.hflip_prob),
            vflip: rng.random_bool(cfg.vflip_prob),
        }
    }

    /// Rotation first, then flips.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut out = if self.angle_deg == 0.0 {
            sample.clone()
        } else {
            rotate(sample, self.angle_deg)
        };
        if self.hflip {
            out = flip_horizontal(&out);
        }
        if self.vflip {
            out = flip_vertical(&out);
        }
        out
    }
}

/// Inverse-maps output pixel `(x, y)` to source coordinates for a
/// counter-clockwise rotation by `angle_deg` about the image center.
fn source_coords(w: usize, h: usize, angle_deg: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    move |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // image y axis points down, so a visual CCW turn uses +s here
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    }
}

fn rotate_bilinear(img: &Raster<f32>, angle_deg: f64) -> Raster<f32> {
    let (w, h) = (img.width(), img.height());
    let map = source_coords(w, h, angle_deg);
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x, y);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out.set(x, y, v as f32);
        }
    }
    out
}

fn rotate_nearest(mask: &Raster<u8>, angle_deg: f64) -> Raster<u8> {
    let (w, h) = (mask.width(), mask.height());
    let map = source_coords(w, h, angle_deg);
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x, y);
            let (rx, ry) = (sx.round(), sy.round());
            if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                out.set(x, y, mask.get(rx as usize, ry as usize));
            }
        }
    }
    out
}

/// Rotates about the center; exposed corners become 0 in both image and mask.
pub fn rotate(sample: &Sample, angle_deg: f64) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: rotate_bilinear(&sample.image, angle_deg),
        mask: rotate_nearest(&sample.mask, angle_deg),
        split: sample.split,
    }
}

fn flip<T: Copy + Default>(r: &Raster<T>, horizontal: bool) -> Raster<T> {
    let (w, h) = (r.width(), r.height());
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) };
            out.set(x, y, r.get(sx, sy));
        }
    }
    out
}

pub fn flip_horizontal(sample: &Sample) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: flip(&sample.image, true),
        mask: flip(&sample.mask, true),
        split: sample.split,
    }
}

pub fn flip_vertical(sample: &Sample) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: flip(&sample.image, false),
        mask: flip(&sample.mask, false),
        split: sample.split,
    }
}

/// Draws a transform from `rng` and applies it to image and mask alike.
pub fn augment<R: Rng + ?Sized>(
    sample: &Sample,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (Sample, AugmentDraw) {
    let draw = AugmentDraw::sample(cfg, rng);
    (draw.apply(sample), draw)
}

/// Seed for one (run seed, sample id, epoch) triple.
pub(crate) fn sample_key(seed: u64, id: &str, epoch: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((id.len() as u64).to_le_bytes());
    h.update(id.as_bytes());
    h.update((epoch as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// [`augment`] with a generator keyed by `(seed, sample.id, epoch)`, so the
/// result does not depend on processing order.
pub fn augment_keyed(
    sample: &Sample,
    cfg: &AugmentationConfig,
    seed: u64,
    epoch: usize,
) -> (Sample, AugmentDraw) {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_key(seed, &sample.id, epoch));
    augment(sample, cfg, &mut rng)
}
