use crate::{Scalar, Tensor};

/// 2x2 max pooling with stride 2; the argmax offsets are kept for backward.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    cache: Option<([usize; 4], Vec<u8>)>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    fn pool<T: Scalar>(x: &Tensor<T>, mut argmax: Option<&mut Vec<u8>>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let src = x.data();
        let dst = y.data_mut();
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = 0u8;
                    let mut best_v = s[2 * oy * w + 2 * ox];
                    for k in 1..4u8 {
                        let v = s[(2 * oy + (k as usize >> 1)) * w + 2 * ox + (k as usize & 1)];
                        if v > best_v {
                            best_v = v;
                            best = k;
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    dst[o] = best_v;
                    if let Some(a) = argmax.as_deref_mut() {
                        a[o] = best;
                    }
                }
            }
        }
        y
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::pool(x, None)
    }

    pub fn forward_train<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let mut argmax = vec![0u8; n * c * (h / 2) * (w / 2)];
        let y = Self::pool(x, Some(&mut argmax));
        self.cache = Some((x.shape(), argmax));
        y
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (shape, argmax) = self
            .cache
            .take()
            .expect("MaxPool2x2::backward called without forward_train");
        let [_, _, h, w] = shape;
        let (ho, wo) = (h / 2, w / 2);
        let mut dx = Tensor::zeros(shape);
        let out = dx.data_mut();
        for (o, (&g, &k)) in dy.data().iter().zip(&argmax).enumerate() {
            let plane = o / (ho * wo);
            let r = o % (ho * wo);
            let (oy, ox) = (r / wo, r % wo);
            let at = plane * h * w + (2 * oy + (k as usize >> 1)) * w + 2 * ox + (k as usize & 1);
            out[at] = out[at] + g;
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for yy in 0..2 * h {
            let srow = &s[(yy / 2) * w..(yy / 2 + 1) * w];
            let drow = &mut d[yy * 2 * w..(yy + 1) * 2 * w];
            for (xx, v) in drow.iter_mut().enumerate() {
                *v = srow[xx / 2];
            }
        }
    }
    y
}

/// Adjoint of [`upsample_nearest2x`]: sums each 2x2 block.
pub fn upsample_nearest2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h2 * w2..(plane + 1) * h2 * w2];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for yy in 0..h2 {
            for xx in 0..w2 {
                let slot = &mut d[(yy / 2) * w + xx / 2];
                *slot = *slot + s[yy * w2 + xx];
            }
        }
    }
    dx
}
