use super::{DataError, Sample};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Raster<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Raster<u8> {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &Raster<f32>, width: usize, height: usize) -> Raster<f32> {
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, (s - i0 as f64).clamp(0.0, 1.0))
    };
    let cols: Vec<_> = (0..width).map(|x| taps(x, sx, src.width)).collect();
    let mut out = Raster::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, src.height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = src.get(x0, y0) as f64 * (1.0 - fx) + src.get(x1, y0) as f64 * fx;
            let bottom = src.get(x0, y1) as f64 * (1.0 - fx) + src.get(x1, y1) as f64 * fx;
            out.set(x, y, (top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Nearest-neighbour resampling sampling each output pixel at its center.
pub fn resize_nearest<T: Copy + Default>(src: &Raster<T>, width: usize, height: usize) -> Raster<T> {
    let pick = |dst: usize, len_out: usize, len_in: usize| {
        (((2 * dst + 1) * len_in) / (2 * len_out)).min(len_in - 1)
    };
    let cols: Vec<usize> = (0..width).map(|x| pick(x, width, src.width)).collect();
    let mut out = Raster::new(width, height);
    for y in 0..height {
        let sy = pick(y, height, src.height);
        for (x, &sx) in cols.iter().enumerate() {
            out.set(x, y, src.get(sx, sy));
        }
    }
    out
}

/// Square resize: bilinear for the image, nearest for the mask.
pub fn resize(sample: &Sample, target: usize) -> Result<Sample, DataError> {
    if target == 0 || !target.is_multiple_of(32) {
        return Err(DataError::BadSize(target));
    }
    Ok(Sample {
        id: sample.id.clone(),
        image: resize_bilinear(&sample.image, target, target),
        mask: resize_nearest(&sample.mask, target, target),
        split: sample.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Raster<f32> {
        Raster::from_vec(w, h, (0..w * h).map(|i| (i % w) as f32 * 3.0 + (i / w) as f32).collect())
    }

    #[test]
    fn identity_size_is_exact() {
        let img = gradient(64, 64);
        assert_eq!(resize_bilinear(&img, 64, 64), img);
        let mask = img.map(|v| (v as u32 % 2) as u8);
        assert_eq!(resize_nearest(&mask, 64, 64), mask);
    }

    #[test]
    fn hc18_source_resizes_to_square() {
        let s = Sample {
            id: "a".into(),
            image: gradient(800, 540),
            mask: Raster::new(800, 540),
            split: None,
        };
        let r = resize(&s, 512).unwrap();
        assert_eq!((r.image.width(), r.image.height()), (512, 512));
        assert_eq!((r.mask.width(), r.mask.height()), (512, 512));
        assert!(resize(&s, 500).is_err());
    }

    #[test]
    fn bilinear_matches_half_pixel_formula() {
        // 2x downsample of a linear ramp averages neighbouring pairs.
        let ramp = Raster::from_vec(4, 1, vec![0.0, 2.0, 4.0, 6.0]);
        let out = resize_bilinear(&ramp, 2, 1);
        assert_eq!(out.data(), &[1.0, 5.0]);
        // 2x upsample with edge clamping
        let up = resize_bilinear(&Raster::from_vec(2, 1, vec![0.0, 4.0]), 4, 1);
        assert_eq!(up.data(), &[0.0, 1.0, 3.0, 4.0]);
    }
}
