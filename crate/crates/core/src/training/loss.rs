use ftseg_nn::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `1 - soft Dice` on sigmoid probabilities, pooled over the batch.
    DiceLoss,
    /// Mean binary cross-entropy on logits.
    Bce,
    /// Sum of the two.
    #[default]
    DiceBce,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>) -> Result<(), TrainError> {
    if logits.shape() != mask.shape() {
        return Err(TrainError::Shape {
            logits: logits.shape(),
            mask: mask.shape(),
        });
    }
    Ok(())
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_and_grad<T: Scalar>(
    logits: &Tensor<T>,
    mask: &Tensor<T>,
    kind: LossKind,
) -> Result<(f64, Tensor<T>), TrainError> {
    check(logits, mask)?;
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let g: Vec<f64> = mask.data().iter().map(|v| v.as_f64()).collect();
    let n = z.len() as f64;
    let mut grad = vec![0.0f64; z.len()];
    let mut total = 0.0;
    if matches!(kind, LossKind::Bce | LossKind::DiceBce) {
        let mut sum = 0.0;
        for i in 0..z.len() {
            sum += z[i].max(0.0) - z[i] * g[i] + (-z[i].abs()).exp().ln_1p();
            grad[i] += (sigmoid(z[i]) - g[i]) / n;
        }
        total += sum / n;
    }
    if matches!(kind, LossKind::DiceLoss | LossKind::DiceBce) {
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let inter: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_SMOOTH;
        let num = 2.0 * inter + DICE_SMOOTH;
        total += 1.0 - num / denom;
        for i in 0..z.len() {
            let dp = -(2.0 * g[i] * denom - num) / (denom * denom);
            grad[i] += dp * p[i] * (1.0 - p[i]);
        }
    }
    let grad = Tensor::from_vec(logits.shape(), grad.into_iter().map(T::from_f64_lossy).collect());
    Ok((total, grad))
}

pub fn loss<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>, kind: LossKind) -> Result<f64, TrainError> {
    loss_and_grad(logits, mask, kind).map(|(l, _)| l)
}
