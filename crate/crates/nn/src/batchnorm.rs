use crate::{Buffer, Module, Param, Scalar, Tensor};

/// Per-channel batch normalization over `N x H x W`.
///
/// While its scale is trainable, `forward_train` normalizes with batch
/// statistics and updates the running estimates. A frozen layer always
/// normalizes with its running estimates and never updates them, so a
/// frozen block computes the same function in training and evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
enum BnCache<T> {
    Batch { xhat: Tensor<T>, inv_std: Vec<T> },
    Running { inv_std: Vec<T> },
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            weight: Param::filled(format!("{prefix}.weight"), vec![channels], T::one()),
            bias: Param::zeros(format!("{prefix}.bias"), vec![channels]),
            running_mean: Buffer::filled(format!("{prefix}.running_mean"), vec![channels], T::zero()),
            running_var: Buffer::filled(format!("{prefix}.running_var"), vec![channels], T::one()),
            cache: None,
        }
    }

    fn uses_batch_stats(&self) -> bool {
        self.weight.trainable || self.bias.trainable
    }

    fn running_inv_std(&self) -> Vec<T> {
        let eps = T::from_f64_lossy(self.eps);
        self.running_var
            .value
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect()
    }

    fn affine(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Tensor<T> {
        let mut y = x.clone();
        let plane = x.plane();
        for i in 0..x.batch() {
            for (c, chunk) in y.item_mut(i).chunks_mut(plane).enumerate() {
                let scale = self.weight.value[c] * inv_std[c];
                let shift = self.bias.value[c] - mean[c] * scale;
                chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    /// Inference: always uses running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.channels, "{} channels", self.weight.name);
        self.affine(x, &self.running_mean.value, &self.running_inv_std())
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.channels, "{} channels", self.weight.name);
        if !self.uses_batch_stats() {
            let inv_std = self.running_inv_std();
            let y = self.affine(x, &self.running_mean.value, &inv_std);
            self.cache = Some(BnCache::Running { inv_std });
            return y;
        }
        let plane = x.plane();
        let count = x.batch() * plane;
        let m = count as f64;
        let mut mean = vec![T::zero(); self.channels];
        let mut var = vec![T::zero(); self.channels];
        for c in 0..self.channels {
            let mut s = 0.0f64;
            for i in 0..x.batch() {
                s += x.item(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let mu = s / m;
            let mut sq = 0.0f64;
            for i in 0..x.batch() {
                sq += x.item(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
            let biased = sq / m;
            mean[c] = T::from_f64_lossy(mu);
            var[c] = T::from_f64_lossy(biased);
            let unbiased = if count > 1 { sq / (m - 1.0) } else { biased };
            let mo = self.momentum;
            let rm = &mut self.running_mean.value[c];
            *rm = T::from_f64_lossy((1.0 - mo) * rm.as_f64() + mo * mu);
            let rv = &mut self.running_var.value[c];
            *rv = T::from_f64_lossy((1.0 - mo) * rv.as_f64() + mo * unbiased);
        }
        let eps = T::from_f64_lossy(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for i in 0..x.batch() {
            for (c, chunk) in xhat.item_mut(i).chunks_mut(plane).enumerate() {
                let (mu, is) = (mean[c], inv_std[c]);
                chunk.iter_mut().for_each(|v| *v = (*v - mu) * is);
            }
        }
        let mut y = xhat.clone();
        for i in 0..x.batch() {
            for (c, chunk) in y.item_mut(i).chunks_mut(plane).enumerate() {
                let (g, b) = (self.weight.value[c], self.bias.value[c]);
                chunk.iter_mut().for_each(|v| *v = *v * g + b);
            }
        }
        self.cache = Some(BnCache::Batch { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .expect("BatchNorm2d::backward called without forward_train");
        let plane = dy.plane();
        let n = dy.batch();
        match cache {
            BnCache::Running { inv_std } => {
                if !need_dx {
                    return None;
                }
                let mut dx = dy.clone();
                for i in 0..n {
                    for (c, chunk) in dx.item_mut(i).chunks_mut(plane).enumerate() {
                        let s = self.weight.value[c] * inv_std[c];
                        chunk.iter_mut().for_each(|v| *v = *v * s);
                    }
                }
                Some(dx)
            }
            BnCache::Batch { xhat, inv_std } => {
                let mut sum_dy = vec![T::zero(); self.channels];
                let mut sum_dy_xhat = vec![T::zero(); self.channels];
                for i in 0..n {
                    let g = dy.item(i);
                    let xh = xhat.item(i);
                    for c in 0..self.channels {
                        let gs = &g[c * plane..(c + 1) * plane];
                        let xs = &xh[c * plane..(c + 1) * plane];
                        sum_dy[c] = sum_dy[c] + gs.iter().copied().sum::<T>();
                        sum_dy_xhat[c] = sum_dy_xhat[c]
                            + gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                if self.weight.trainable {
                    let gw = self.weight.grad_mut();
                    for c in 0..self.channels {
                        gw[c] = gw[c] + sum_dy_xhat[c];
                    }
                }
                if self.bias.trainable {
                    let gb = self.bias.grad_mut();
                    for c in 0..self.channels {
                        gb[c] = gb[c] + sum_dy[c];
                    }
                }
                if !need_dx {
                    return None;
                }
                let m = T::from_usize_lossy(n * plane);
                let mut dx = dy.clone();
                for i in 0..n {
                    let xh = xhat.item(i);
                    let out = dx.item_mut(i);
                    for c in 0..self.channels {
                        let k = self.weight.value[c] * inv_std[c] / m;
                        let (sd, sdx) = (sum_dy[c], sum_dy_xhat[c]);
                        let xs = &xh[c * plane..(c + 1) * plane];
                        for (v, &xv) in out[c * plane..(c + 1) * plane].iter_mut().zip(xs) {
                            *v = k * (m * *v - sd - xv * sdx);
                        }
                    }
                }
                Some(dx)
            }
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
