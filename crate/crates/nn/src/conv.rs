use rand::Rng;

use crate::scalar::{matmul, Layout};
use crate::{Buffer, Module, Param, Scalar, Tensor};

/// Square-kernel 2-D convolution settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// One filter per input channel (`groups == in_channels == out_channels`).
    pub depthwise: bool,
    pub bias: bool,
}

impl Conv2dConfig {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            depthwise: false,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn depthwise(mut self) -> Self {
        assert_eq!(self.in_channels, self.out_channels);
        self.depthwise = true;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let per_group_in = if self.depthwise { 1 } else { self.in_channels };
        vec![self.out_channels, per_group_in, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        let per_group_in = if self.depthwise { 1 } else { self.in_channels };
        per_group_in * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    fn is_pointwise(&self) -> bool {
        !self.depthwise && self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub config: Conv2dConfig,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, config: Conv2dConfig, rng: &mut R) -> Self {
        let weight = Param::he_uniform(
            format!("{prefix}.weight"),
            config.weight_shape(),
            config.fan_in(),
            rng,
        );
        let bias = config
            .bias
            .then(|| Param::zeros(format!("{prefix}.bias"), vec![config.out_channels]));
        Self {
            config,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let cfg = &self.config;
        let [n, c, h, w] = x.shape();
        assert_eq!(c, cfg.in_channels, "conv {} input channels", self.weight.name);
        let (ho, wo) = cfg.output_hw(h, w);
        let mut y = Tensor::zeros([n, cfg.out_channels, ho, wo]);
        if cfg.depthwise {
            for i in 0..n {
                depthwise_forward(cfg, &self.weight.value, x.item(i), h, w, y.item_mut(i));
            }
        } else {
            dense_forward(cfg, &self.weight.value, x, &mut y);
        }
        if let Some(b) = &self.bias {
            let plane = ho * wo;
            for i in 0..n {
                for (co, chunk) in y.item_mut(i).chunks_mut(plane).enumerate() {
                    let bv = b.value[co];
                    chunk.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        y
    }

    /// Forward pass that keeps the input for [`Conv2d::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(x.clone());
        y
    }

    /// Accumulates parameter gradients (for trainable parameters) and
    /// returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self
            .cache
            .take()
            .expect("Conv2d::backward called without forward_train");
        let cfg = self.config;
        let [n, _, h, w] = x.shape();
        let [_, _, ho, wo] = dy.shape();
        let plane = ho * wo;

        if let Some(b) = self.bias.as_mut().filter(|b| b.trainable) {
            let g = b.grad_mut();
            for i in 0..n {
                for (co, chunk) in dy.item(i).chunks(plane).enumerate() {
                    g[co] = g[co] + chunk.iter().copied().sum::<T>();
                }
            }
        }

        let want_dw = self.weight.trainable;
        if !want_dw && !need_dx {
            return None;
        }
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));

        if cfg.depthwise {
            let weights = self.weight.value.clone();
            for i in 0..n {
                let dxi = dx.as_mut().map(|t| t.item_mut(i));
                let dw = want_dw.then(|| self.weight.grad_mut());
                depthwise_backward(cfg, &weights, x.item(i), h, w, dy.item(i), dw, dxi);
            }
            return dx;
        }

        let weights = self.weight.value.clone();
        let dw = want_dw.then(|| self.weight.grad_mut());
        dense_backward(&cfg, &weights, &x, dy, dw, dx.as_mut());
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
    fn visit_buffers(&self, _f: &mut dyn FnMut(&Buffer<T>)) {}
}

/// Unfolds one `C x H x W` item into `(C*k*k) x (Ho*Wo)` columns.
/// Images are batched into one GEMM until it has about this many columns.
const GEMM_COLUMNS: usize = 1024;

fn group_size(n: usize, plane: usize) -> usize {
    (GEMM_COLUMNS / plane).clamp(1, n.max(1))
}

/// Fills the `k x (m * p)` patch matrix for items `start..start + m`.
fn gather_cols<T: Scalar>(
    cfg: &Conv2dConfig,
    x: &Tensor<T>,
    start: usize,
    m: usize,
    cols: &mut [T],
) {
    let [_, c, h, w] = x.shape();
    let (ho, wo) = cfg.output_hw(h, w);
    let p = ho * wo;
    let stride = m * p;
    for j in 0..m {
        if cfg.is_pointwise() {
            let item = x.item(start + j);
            for r in 0..c {
                cols[r * stride + j * p..r * stride + (j + 1) * p]
                    .copy_from_slice(&item[r * p..(r + 1) * p]);
            }
        } else {
            im2col(cfg, x.item(start + j), h, w, ho, wo, cols, stride, j * p);
        }
    }
}

fn dense_forward<T: Scalar>(cfg: &Conv2dConfig, weight: &[T], x: &Tensor<T>, y: &mut Tensor<T>) {
    let [n, _, h, w] = x.shape();
    let (ho, wo) = cfg.output_hw(h, w);
    let (k, co, p) = (cfg.fan_in(), cfg.out_channels, ho * wo);
    let g = group_size(n, p);
    if g == 1 {
        let mut cols = if cfg.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for i in 0..n {
            let input: &[T] = if cfg.is_pointwise() {
                x.item(i)
            } else {
                im2col(cfg, x.item(i), h, w, ho, wo, &mut cols, p, 0);
                &cols
            };
            matmul(co, k, p, T::one(), weight, Layout::Normal, input, Layout::Normal, T::zero(), y.item_mut(i));
        }
        return;
    }
    let mut cols = vec![T::zero(); k * g * p];
    let mut out = vec![T::zero(); co * g * p];
    for start in (0..n).step_by(g) {
        let m = g.min(n - start);
        let mp = m * p;
        gather_cols(cfg, x, start, m, &mut cols[..k * mp]);
        matmul(co, k, mp, T::one(), weight, Layout::Normal, &cols[..k * mp], Layout::Normal, T::zero(), &mut out[..co * mp]);
        for j in 0..m {
            let item = y.item_mut(start + j);
            for c in 0..co {
                item[c * p..(c + 1) * p].copy_from_slice(&out[c * mp + j * p..c * mp + (j + 1) * p]);
            }
        }
    }
}

fn dense_backward<T: Scalar>(
    cfg: &Conv2dConfig,
    weight: &[T],
    x: &Tensor<T>,
    dy: &Tensor<T>,
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut Tensor<T>>,
) {
    let [n, _, h, w] = x.shape();
    let (ho, wo) = cfg.output_hw(h, w);
    let (k, co, p) = (cfg.fan_in(), cfg.out_channels, ho * wo);
    let pointwise = cfg.is_pointwise();
    let g = group_size(n, p);
    let mut cols = if dw.is_some() && (g > 1 || !pointwise) { vec![T::zero(); k * g * p] } else { Vec::new() };
    let mut dys = if g > 1 { vec![T::zero(); co * g * p] } else { Vec::new() };
    let mut dcols = if dx.is_some() && (g > 1 || !pointwise) { vec![T::zero(); k * g * p] } else { Vec::new() };
    for start in (0..n).step_by(g) {
        let m = g.min(n - start);
        let mp = m * p;
        let dy_block: &[T] = if m == 1 {
            dy.item(start)
        } else {
            for j in 0..m {
                let item = dy.item(start + j);
                for c in 0..co {
                    dys[c * mp + j * p..c * mp + (j + 1) * p].copy_from_slice(&item[c * p..(c + 1) * p]);
                }
            }
            &dys[..co * mp]
        };
        if let Some(dw) = dw.as_deref_mut() {
            let input: &[T] = if m == 1 && pointwise {
                x.item(start)
            } else {
                gather_cols(cfg, x, start, m, &mut cols[..k * mp]);
                &cols[..k * mp]
            };
            // dW (co x k) += dY (co x mp) * cols^T (mp x k)
            matmul(co, mp, k, T::one(), dy_block, Layout::Normal, input, Layout::Transposed, T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (k x mp) = W^T (k x co) * dY (co x mp)
            if m == 1 && pointwise {
                matmul(k, co, mp, T::one(), weight, Layout::Transposed, dy_block, Layout::Normal, T::zero(), dx.item_mut(start));
                continue;
            }
            matmul(k, co, mp, T::one(), weight, Layout::Transposed, dy_block, Layout::Normal, T::zero(), &mut dcols[..k * mp]);
            for j in 0..m {
                let item = dx.item_mut(start + j);
                if pointwise {
                    for r in 0..k {
                        item[r * p..(r + 1) * p].copy_from_slice(&dcols[r * mp + j * p..r * mp + (j + 1) * p]);
                    }
                } else {
                    col2im(cfg, &dcols, h, w, ho, wo, item, mp, j * p);
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox * s + kx - pad` lies
/// inside `[0, w)`.
fn valid_range(k_off: usize, s: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k_off).div_ceil(s);
    let hi = if w + pad > k_off {
        ((w + pad - k_off - 1) / s + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Writes the patch matrix of one image into `cols`: row `r` occupies
/// `cols[r * row_stride + offset..][..ho * wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    cfg: &Conv2dConfig,
    x: &[T],
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
    row_stride: usize,
    offset: usize,
) {
    let (k, s, pad) = (cfg.kernel, cfg.stride, cfg.padding);
    let plane = ho * wo;
    for c in 0..cfg.in_channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let base = row * row_stride + offset;
                let dst = &mut cols[base..base + plane];
                let (lo, hi) = valid_range(kx, s, pad, w, wo);
                for oy in 0..ho {
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let first = lo * s + kx - pad;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                    } else {
                        for (j, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src_row[first + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cfg: &Conv2dConfig,
    cols: &[T],
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    dx: &mut [T],
    row_stride: usize,
    offset: usize,
) {
    let (k, s, pad) = (cfg.kernel, cfg.stride, cfg.padding);
    let plane = ho * wo;
    for c in 0..cfg.in_channels {
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let base = row * row_stride + offset;
                let src = &cols[base..base + plane];
                let (lo, hi) = valid_range(kx, s, pad, w, wo);
                if lo >= hi {
                    continue;
                }
                let first = lo * s + kx - pad;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * wo + lo..oy * wo + hi];
                    if s == 1 {
                        for (d, &g) in dst_row[first..first + hi - lo].iter_mut().zip(src_row) {
                            *d = *d + g;
                        }
                    } else {
                        for (j, &g) in src_row.iter().enumerate() {
                            let d = &mut dst_row[first + j * s];
                            *d = *d + g;
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(
    cfg: &Conv2dConfig,
    weight: &[T],
    x: &[T],
    h: usize,
    w: usize,
    y: &mut [T],
) {
    let (k, s, pad) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    let (ho, wo) = cfg.output_hw(h, w);
    for c in 0..cfg.in_channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let wk = &weight[c * k * k..(c + 1) * k * k];
        let dst = &mut y[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            acc = acc + row[ix as usize] * wk[ky * k + kx];
                        }
                    }
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_backward<T: Scalar>(
    cfg: Conv2dConfig,
    weight: &[T],
    x: &[T],
    h: usize,
    w: usize,
    dy: &[T],
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let (k, s, pad) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    let (ho, wo) = cfg.output_hw(h, w);
    for c in 0..cfg.in_channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let wk = &weight[c * k * k..(c + 1) * k * k];
        let g = &dy[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = g[oy * wo + ox];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = iy as usize * w + ix as usize;
                        if let Some(dw) = dw.as_deref_mut() {
                            let slot = &mut dw[c * k * k + ky * k + kx];
                            *slot = *slot + gv * src[at];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let slot = &mut dx[c * h * w + at];
                            *slot = *slot + gv * wk[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-summation reference for a dense or depthwise convolution.
    fn reference(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let cfg = conv.config;
        let [n, c, h, w] = x.shape();
        let (ho, wo) = cfg.output_hw(h, w);
        let k = cfg.kernel;
        let mut y = Tensor::zeros([n, cfg.out_channels, ho, wo]);
        let cin = if cfg.depthwise { 1 } else { c };
        for i in 0..n {
            for co in 0..cfg.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for cj in 0..cin {
                            let ci = if cfg.depthwise { co } else { cj };
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * cfg.stride + ky) as isize - cfg.padding as isize;
                                    let ix = (ox * cfg.stride + kx) as isize - cfg.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((co * cin + cj) * k + ky) * k + kx];
                                    acc += wv * x.get(i, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        y.data_mut()[((i * cfg.out_channels + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn configs() -> Vec<Conv2dConfig> {
        vec![
            Conv2dConfig::new(3, 4, 3),
            Conv2dConfig::new(3, 4, 3).stride(2),
            Conv2dConfig::new(3, 5, 1).padding(0),
            Conv2dConfig::new(2, 3, 5).padding(1),
            Conv2dConfig::new(2, 3, 3).stride(2).padding(0),
            Conv2dConfig::new(3, 2, 1).padding(0).stride(2),
            Conv2dConfig::new(4, 4, 3).depthwise().no_bias(),
            Conv2dConfig::new(4, 4, 3).depthwise().stride(2).no_bias(),
        ]
    }

    #[test]
    fn forward_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in configs() {
            let mut conv = Conv2d::<f64>::new("c", cfg, &mut rng);
            if let Some(b) = conv.bias.as_mut() {
                b.value.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            // the larger plane takes the one-image-per-GEMM path
            for (h, w) in [(6, 8), (33, 34)] {
                let x = random_tensor([2, cfg.in_channels, h, w], &mut rng);
                let got = conv.forward(&x);
                let want = reference(&conv, &x);
                assert_eq!(got.shape(), want.shape());
                for (a, b) in got.data().iter().zip(want.data()) {
                    assert!((a - b).abs() < 1e-12, "{cfg:?}");
                }
            }
        }
    }

    #[test]
    fn batched_gradients_equal_sum_of_single_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cfg in configs() {
            let mut conv = Conv2d::<f64>::new("c", cfg, &mut rng);
            let x = random_tensor([3, cfg.in_channels, 5, 7], &mut rng);
            let y = conv.forward_train(&x);
            let r = random_tensor(y.shape(), &mut rng);
            let dx = conv.backward(&r, true).unwrap();
            let batched = conv.weight.grad().to_vec();
            conv.weight.zero_grad();
            for i in 0..3 {
                let xi = Tensor::from_vec([1, x.shape()[1], 5, 7], x.item(i).to_vec());
                let yi = conv.forward_train(&xi);
                for (a, b) in yi.item(0).iter().zip(y.item(i)) {
                    assert!((a - b).abs() < 1e-12, "{cfg:?}");
                }
                let ri = Tensor::from_vec(yi.shape(), r.item(i).to_vec());
                let dxi = conv.backward(&ri, true).unwrap();
                for (a, b) in dxi.item(0).iter().zip(dx.item(i)) {
                    assert!((a - b).abs() < 1e-12, "{cfg:?}");
                }
            }
            for (a, b) in conv.weight.grad().iter().zip(&batched) {
                assert!((a - b).abs() < 1e-10, "{cfg:?}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for cfg in configs() {
            let mut conv = Conv2d::<f64>::new("c", cfg, &mut rng);
            let x = random_tensor([2, cfg.in_channels, 5, 6], &mut rng);
            let y = conv.forward_train(&x);
            // loss = sum(y * r) for a fixed random r
            let r = random_tensor(y.shape(), &mut rng);
            let dx = conv.backward(&r, true).unwrap();
            let loss = |conv: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
                conv.forward(x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for idx in [0, 3, x.len() / 2, x.len() - 1] {
                let mut xp = x.clone();
                xp.data_mut()[idx] += eps;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= eps;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
                assert!((fd - dx.data()[idx]).abs() < 1e-6, "{cfg:?} dx[{idx}]");
            }
            let grad = conv.weight.grad().to_vec();
            for idx in [0, grad.len() / 3, grad.len() - 1] {
                let orig = conv.weight.value[idx];
                conv.weight.value[idx] = orig + eps;
                let lp = loss(&conv, &x);
                conv.weight.value[idx] = orig - eps;
                let lm = loss(&conv, &x);
                conv.weight.value[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - grad[idx]).abs() < 1e-6, "{cfg:?} dw[{idx}]");
            }
        }
    }

    #[test]
    fn frozen_weight_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new("c", Conv2dConfig::new(2, 2, 3), &mut rng);
        conv.set_trainable(false);
        let x = random_tensor([1, 2, 4, 4], &mut rng);
        let y = conv.forward_train(&x);
        assert!(conv.backward(&y, false).is_none());
        assert!(!conv.weight.has_grad());
        assert!(!conv.bias.as_ref().unwrap().has_grad());
    }

    #[test]
    fn single_three_by_three_conv_has_twenty_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f32>::new("c", Conv2dConfig::new(1, 2, 3), &mut rng);
        assert_eq!(conv.num_params(), 20);
    }
}
