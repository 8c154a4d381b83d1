use rand::Rng;

use crate::scalar::{matmul, Layout};
use crate::{Module, Param, Scalar, Tensor};

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
///
/// Weight layout is `[in, out, 2, 2]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        // fan_in follows the framework convention for transposed convs (dim 1).
        let weight = Param::he_uniform(
            format!("{prefix}.weight"),
            vec![in_channels, out_channels, 2, 2],
            out_channels * 4,
            rng,
        );
        Self {
            in_channels,
            out_channels,
            weight,
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_channels]),
            cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "{} input channels", self.weight.name);
        let co = self.out_channels;
        let p = h * w;
        let rows = co * 4;
        let mut z = vec![T::zero(); rows * p];
        let mut y = Tensor::zeros([n, co, 2 * h, 2 * w]);
        for i in 0..n {
            // z ((co,a,b) x p) = W^T ((co,a,b) x ci) * x (ci x p)
            matmul(
                rows,
                c,
                p,
                T::one(),
                &self.weight.value,
                Layout::Transposed,
                x.item(i),
                Layout::Normal,
                T::zero(),
                &mut z,
            );
            let out = y.item_mut(i);
            for o in 0..co {
                let b = self.bias.value[o];
                for a in 0..2 {
                    for bb in 0..2 {
                        let zr = &z[((o * 2 + a) * 2 + bb) * p..][..p];
                        for yy in 0..h {
                            let dst = &mut out[(o * 2 * h + 2 * yy + a) * 2 * w..][..2 * w];
                            for xx in 0..w {
                                dst[2 * xx + bb] = zr[yy * w + xx] + b;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self
            .cache
            .take()
            .expect("ConvTranspose2x2::backward called without forward_train");
        let [n, c, h, w] = x.shape();
        let co = self.out_channels;
        let p = h * w;
        let rows = co * 4;
        if self.bias.trainable {
            let g = self.bias.grad_mut();
            for i in 0..n {
                for (o, chunk) in dy.item(i).chunks(4 * p).enumerate() {
                    g[o] = g[o] + chunk.iter().copied().sum::<T>();
                }
            }
        }
        let want_dw = self.weight.trainable;
        if !want_dw && !need_dx {
            return None;
        }
        let mut dz = vec![T::zero(); rows * p];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..n {
            let g = dy.item(i);
            for o in 0..co {
                for a in 0..2 {
                    for bb in 0..2 {
                        let zr = &mut dz[((o * 2 + a) * 2 + bb) * p..][..p];
                        for yy in 0..h {
                            let src = &g[(o * 2 * h + 2 * yy + a) * 2 * w..][..2 * w];
                            for xx in 0..w {
                                zr[yy * w + xx] = src[2 * xx + bb];
                            }
                        }
                    }
                }
            }
            if want_dw {
                // dW (ci x rows) += x (ci x p) * dz^T (p x rows)
                matmul(
                    c,
                    p,
                    rows,
                    T::one(),
                    x.item(i),
                    Layout::Normal,
                    &dz,
                    Layout::Transposed,
                    T::one(),
                    self.weight.grad_mut(),
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dx (ci x p) = W (ci x rows) * dz (rows x p)
                matmul(
                    c,
                    rows,
                    p,
                    T::one(),
                    &self.weight.value,
                    Layout::Normal,
                    &dz,
                    Layout::Normal,
                    T::zero(),
                    dx.item_mut(i),
                );
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2x2<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_scatters_each_input_into_a_two_by_two_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut up = ConvTranspose2x2::<f64>::new("u", 2, 3, &mut rng);
        up.bias.value = vec![0.5, -0.5, 1.0];
        let x = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|v| v as f64 * 0.1 - 0.4).collect());
        let y = up.forward(&x);
        assert_eq!(y.shape(), [1, 3, 4, 6]);
        for o in 0..3 {
            for yy in 0..4 {
                for xx in 0..6 {
                    let mut want = up.bias.value[o];
                    for ci in 0..2 {
                        let wv = up.weight.value[((ci * 3 + o) * 2 + yy % 2) * 2 + xx % 2];
                        want += wv * x.get(0, ci, yy / 2, xx / 2);
                    }
                    assert!((y.get(0, o, yy, xx) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut up = ConvTranspose2x2::<f64>::new("u", 3, 2, &mut rng);
        let x = Tensor::from_vec([2, 3, 2, 2], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = up.forward_train(&x);
        let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = up
            .backward(&Tensor::from_vec(y.shape(), r.clone()), true)
            .unwrap();
        let loss = |up: &ConvTranspose2x2<f64>, x: &Tensor<f64>| -> f64 {
            up.forward(x).data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&up, &xp) - loss(&up, &xm)) / (2.0 * eps);
            assert!((fd - dx.data()[idx]).abs() < 1e-6);
        }
        let gw = up.weight.grad().to_vec();
        for idx in 0..gw.len() {
            let orig = up.weight.value[idx];
            up.weight.value[idx] = orig + eps;
            let lp = loss(&up, &x);
            up.weight.value[idx] = orig - eps;
            let lm = loss(&up, &x);
            up.weight.value[idx] = orig;
            assert!(((lp - lm) / (2.0 * eps) - gw[idx]).abs() < 1e-6);
        }
    }
}
