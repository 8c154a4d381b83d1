use ftseg_nn::Scalar;
use serde::{Deserialize, Serialize};

use crate::net::SegmentationNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Only trainable parameters that received a
/// gradient are read or written.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    /// First and second moments, indexed by parameter visit order.
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Scalar>(&mut self, net: &mut SegmentationNetwork<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let moments = &mut self.moments;
        let mut index = 0;
        net.visit_params_mut(&mut |p| {
            let i = index;
            index += 1;
            if moments.len() <= i {
                moments.resize_with(i + 1, || None);
            }
            if !p.trainable || !p.has_grad() {
                return;
            }
            let (m, v) = moments[i].get_or_insert_with(|| (vec![0.0; p.count()], vec![0.0; p.count()]));
            let grad: Vec<f64> = p.grad().iter().map(|g| g.as_f64()).collect();
            for (k, g) in grad.into_iter().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                p.value[k] = T::from_f64_lossy(p.value[k].as_f64() - update);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_baseline_unet, SegmentationModelSpec};
    use ftseg_nn::Tensor;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let spec = SegmentationModelSpec::baseline_with_features(&[2, 4]);
        let mut net = build_baseline_unet::<f64>(&spec).unwrap();
        let before = net.state_archive();
        let y = net.forward_train(&Tensor::full([1, 3, 8, 8], 0.5)).unwrap();
        net.backward(&Tensor::full(y.shape(), 1.0));
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut net, 1e-3);
        // with bias correction the first update is lr * g / (|g| + eps)
        net.visit_params(&mut |p| {
            let old = before.get(&p.name).unwrap();
            let mut old_vals: Vec<f64> = Vec::new();
            old.data.copy_into(&mut old_vals);
            for ((&new, &o), &g) in p.value.iter().zip(&old_vals).zip(p.grad()) {
                let expected = 1e-3 * g / (g.abs() + 1e-8);
                let moved: f64 = o - new;
                assert!((moved - expected).abs() < 1e-12, "{}: {moved} vs {expected}", p.name);
            }
        });
    }
}
