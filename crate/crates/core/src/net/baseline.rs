//! Decoder block of the classic U-Net: learned 2x upsampling, skip
//! concatenation and a double convolution.

use ftseg_nn::{Buffer, ConvTranspose2x2, Module, Param, Scalar, Tensor};
use rand::Rng;

use super::blocks::DoubleConv;

#[derive(Debug, Clone)]
pub struct BaselineDecoderBlock<T> {
    pub up: ConvTranspose2x2<T>,
    pub conv: DoubleConv<T>,
    pub features: usize,
}

impl<T: Scalar> BaselineDecoderBlock<T> {
    /// `in_channels` is the width arriving from below; `features` is the
    /// width of the matching skip and of the block output.
    pub fn new<R: Rng + ?Sized>(prefix: &str, in_channels: usize, features: usize, rng: &mut R) -> Self {
        Self {
            up: ConvTranspose2x2::new(&format!("{prefix}.up"), in_channels, features, rng),
            conv: DoubleConv::new(prefix, 2 * features, features, rng),
            features,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, skip: &Tensor<T>) -> Tensor<T> {
        let up = self.up.forward(x);
        self.conv.forward(&Tensor::concat_channels(&up, skip))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>, skip: &Tensor<T>) -> Tensor<T> {
        let up = self.up.forward_train(x);
        self.conv.forward_train(&Tensor::concat_channels(&up, skip))
    }

    pub fn backward(
        &mut self,
        dy: Tensor<T>,
        need_dx: bool,
        need_dskip: bool,
    ) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
        let up_needs = need_dx || self.up.any_trainable();
        let Some(dm) = self.conv.backward(dy, up_needs || need_dskip) else {
            return (None, None);
        };
        let (dup, dskip) = dm.split_channels(self.features);
        let dx = if up_needs {
            self.up.backward(&dup, need_dx)
        } else {
            None
        };
        (dx, need_dskip.then_some(dskip))
    }
}

impl<T: Scalar> Module<T> for BaselineDecoderBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.up.visit_params(f);
        self.conv.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.up.visit_params_mut(f);
        self.conv.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.conv.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.conv.visit_buffers_mut(f);
    }
}
