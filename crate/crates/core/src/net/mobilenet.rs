//! MobileNetV2 feature extractor split into five resolution stages, and the
//! nearest-upsampling decoder block used on top of it.

use ftseg_nn::{
    upsample_nearest2x, upsample_nearest2x_backward, Activation, Buffer, Conv2dConfig, Module, Param,
    Scalar, Tensor,
};
use rand::Rng;

use super::blocks::{ConvBnAct, InvertedResidual};

/// `(expand_ratio, out_channels, repeats, first_stride)` per bottleneck sequence.
pub const INVERTED_RESIDUAL_SETTINGS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

pub const STEM_CHANNELS: usize = 32;
pub const LAST_CHANNELS: usize = 1280;

#[derive(Debug, Clone)]
pub enum EncoderBlock<T> {
    Conv(ConvBnAct<T>),
    Inverted(InvertedResidual<T>),
}

impl<T: Scalar> EncoderBlock<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            EncoderBlock::Conv(b) => b.forward(x),
            EncoderBlock::Inverted(b) => b.forward(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            EncoderBlock::Conv(b) => b.forward_train(x),
            EncoderBlock::Inverted(b) => b.forward_train(x),
        }
    }

    fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        match self {
            EncoderBlock::Conv(b) => b.backward(dy, need_dx),
            EncoderBlock::Inverted(b) => b.backward(dy, need_dx),
        }
    }
}

impl<T: Scalar> Module<T> for EncoderBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            EncoderBlock::Conv(b) => b.visit_params(f),
            EncoderBlock::Inverted(b) => b.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            EncoderBlock::Conv(b) => b.visit_params_mut(f),
            EncoderBlock::Inverted(b) => b.visit_params_mut(f),
        }
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        match self {
            EncoderBlock::Conv(b) => b.visit_buffers(f),
            EncoderBlock::Inverted(b) => b.visit_buffers(f),
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        match self {
            EncoderBlock::Conv(b) => b.visit_buffers_mut(f),
            EncoderBlock::Inverted(b) => b.visit_buffers_mut(f),
        }
    }
}

/// Sequence of encoder blocks ending at one feature tap.
#[derive(Debug, Clone)]
pub struct EncoderStage<T> {
    pub blocks: Vec<EncoderBlock<T>>,
}

impl<T: Scalar> EncoderStage<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = self.blocks[0].forward(x);
        for b in &self.blocks[1..] {
            h = b.forward(&h);
        }
        h
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = self.blocks[0].forward_train(x);
        for b in &mut self.blocks[1..] {
            h = b.forward_train(&h);
        }
        h
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        // block i must return a gradient if anything before it is trainable
        let n = self.blocks.len();
        let mut earlier_trainable = vec![false; n];
        for i in 1..n {
            earlier_trainable[i] = earlier_trainable[i - 1] || self.blocks[i - 1].any_trainable();
        }
        let mut d = dy;
        for i in (0..n).rev() {
            let need = need_dx || earlier_trainable[i];
            {
                let next = self.blocks[i].backward(d, need)?;
                d = next
            }
        }
        Some(d)
    }
}

impl<T: Scalar> Module<T> for EncoderStage<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.blocks.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.blocks.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.blocks.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.blocks.visit_buffers_mut(f);
    }
}

/// Builds the 19-layer MobileNetV2 feature extractor grouped into the five
/// stages whose outputs are the stride 2, 4, 8, 16 and 32 taps.
pub fn build_encoder<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<EncoderStage<T>> {
    // features[0..2], [2..4], [4..7], [7..14], [14..19]
    const STAGE_ENDS: [usize; 5] = [2, 4, 7, 14, 19];
    let mut layers: Vec<EncoderBlock<T>> = Vec::with_capacity(19);
    let mut stage = 0;
    let mut block = 0;
    let mut next_name = |layers_len: usize| {
        while layers_len >= STAGE_ENDS[stage] {
            stage += 1;
            block = 0;
        }
        let name = format!("encoder.{stage}.{block}");
        block += 1;
        name
    };

    let name = next_name(layers.len());
    layers.push(EncoderBlock::Conv(ConvBnAct::new(
        &name,
        Conv2dConfig::new(3, STEM_CHANNELS, 3).stride(2),
        Activation::Relu6,
        rng,
    )));
    let mut cin = STEM_CHANNELS;
    for &(t, c, n, s) in &INVERTED_RESIDUAL_SETTINGS {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let name = next_name(layers.len());
            layers.push(EncoderBlock::Inverted(InvertedResidual::new(
                &name, cin, c, stride, t, rng,
            )));
            cin = c;
        }
    }
    let name = next_name(layers.len());
    layers.push(EncoderBlock::Conv(ConvBnAct::new(
        &name,
        Conv2dConfig::new(cin, LAST_CHANNELS, 1),
        Activation::Relu6,
        rng,
    )));

    let mut stages = Vec::with_capacity(5);
    let mut iter = layers.into_iter();
    let mut start = 0;
    for end in STAGE_ENDS {
        stages.push(EncoderStage {
            blocks: iter.by_ref().take(end - start).collect(),
        });
        start = end;
    }
    stages
}

/// Upsample x2 (nearest), concatenate the skip, then two conv-BN-ReLU stages.
#[derive(Debug, Clone)]
pub struct UnetDecoderBlock<T> {
    pub in_channels: usize,
    pub skip_channels: usize,
    pub first: ConvBnAct<T>,
    pub second: ConvBnAct<T>,
}

impl<T: Scalar> UnetDecoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        in_channels: usize,
        skip_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            in_channels,
            skip_channels,
            first: ConvBnAct::new(
                &format!("{prefix}.conv1"),
                Conv2dConfig::new(in_channels + skip_channels, out_channels, 3),
                Activation::Relu,
                rng,
            ),
            second: ConvBnAct::new(
                &format!("{prefix}.conv2"),
                Conv2dConfig::new(out_channels, out_channels, 3),
                Activation::Relu,
                rng,
            ),
        }
    }

    fn merge(x: &Tensor<T>, skip: Option<&Tensor<T>>) -> Tensor<T> {
        let up = upsample_nearest2x(x);
        match skip {
            Some(s) => Tensor::concat_channels(&up, s),
            None => up,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, skip: Option<&Tensor<T>>) -> Tensor<T> {
        self.second.forward(&self.first.forward(&Self::merge(x, skip)))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>, skip: Option<&Tensor<T>>) -> Tensor<T> {
        let m = Self::merge(x, skip);
        let h = self.first.forward_train(&m);
        self.second.forward_train(&h)
    }

    pub fn backward(
        &mut self,
        dy: Tensor<T>,
        need_dx: bool,
        need_dskip: bool,
    ) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
        let need_merged = need_dx || need_dskip;
        let first_needs = need_merged || self.first.any_trainable();
        let Some(d) = self.second.backward(dy, first_needs) else {
            return (None, None);
        };
        let Some(dm) = self.first.backward(d, need_merged) else {
            return (None, None);
        };
        let (dup, dskip) = if self.skip_channels > 0 {
            let (a, b) = dm.split_channels(self.in_channels);
            (a, Some(b))
        } else {
            (dm, None)
        };
        let dx = need_dx.then(|| upsample_nearest2x_backward(&dup));
        (dx, dskip.filter(|_| need_dskip))
    }
}

impl<T: Scalar> Module<T> for UnetDecoderBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.first.visit_params(f);
        self.second.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.first.visit_params_mut(f);
        self.second.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.first.visit_buffers(f);
        self.second.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.first.visit_buffers_mut(f);
        self.second.visit_buffers_mut(f);
    }
}
