use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// `min(max(x, 0), 6)`
    Relu6,
}

impl Activation {
    pub fn apply<T: Scalar>(self, mut x: Tensor<T>) -> Tensor<T> {
        let six = T::from_f64_lossy(6.0);
        match self {
            Activation::Identity => {}
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::Relu6 => x
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = v.max(T::zero()).min(six)),
        }
        x
    }

    /// Gradient through the activation, given its *output* `y`.
    ///
    /// Uses the open interval (0, 6) so that the derivative at the clamp
    /// points is zero, matching the usual subgradient choice.
    pub fn backward<T: Scalar>(self, y: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
        let six = T::from_f64_lossy(6.0);
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Relu6 => {
                for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() || v >= six {
                        *g = T::zero();
                    }
                }
            }
        }
        dy
    }
}
