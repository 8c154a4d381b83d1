//! Composite layers shared by both U-Net variants.

use ftseg_nn::{Activation, BatchNorm2d, Buffer, Conv2d, Conv2dConfig, Module, Param, Scalar, Tensor};
use rand::Rng;

/// Convolution (no bias) -> batch norm -> activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Activation,
    out_cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvBnAct<T> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, cfg: Conv2dConfig, act: Activation, rng: &mut R) -> Self {
        let cfg = cfg.no_bias();
        Self {
            conv: Conv2d::new(&format!("{prefix}.conv"), cfg, rng),
            bn: BatchNorm2d::new(&format!("{prefix}.bn"), cfg.out_channels),
            act,
            out_cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.act.apply(self.bn.forward(&self.conv.forward(x)))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv.forward_train(x);
        let y = self.act.apply(self.bn.forward_train(&h));
        if self.act != Activation::Identity {
            self.out_cache = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let d = match self.out_cache.take() {
            Some(y) => self.act.backward(&y, dy),
            None => dy,
        };
        let conv_needs = need_dx || self.conv.weight.trainable;
        match self.bn.backward(&d, conv_needs) {
            Some(d) => self.conv.backward(&d, need_dx),
            None => None,
        }
    }
}

impl<T: Scalar> Module<T> for ConvBnAct<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_params_mut(f);
        self.bn.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.bn.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.bn.visit_buffers_mut(f);
    }
}

/// Two 3x3 conv-BN-ReLU stages (the classic U-Net level).
#[derive(Debug, Clone)]
pub struct DoubleConv<T> {
    pub first: ConvBnAct<T>,
    pub second: ConvBnAct<T>,
}

impl<T: Scalar> DoubleConv<T> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            first: ConvBnAct::new(
                &format!("{prefix}.conv1"),
                Conv2dConfig::new(cin, cout, 3),
                Activation::Relu,
                rng,
            ),
            second: ConvBnAct::new(
                &format!("{prefix}.conv2"),
                Conv2dConfig::new(cout, cout, 3),
                Activation::Relu,
                rng,
            ),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.second.forward(&self.first.forward(x))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.first.forward_train(x);
        self.second.forward_train(&h)
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let first_needs = need_dx || self.first.any_trainable();
        let d = self.second.backward(dy, first_needs)?;
        self.first.backward(d, need_dx)
    }
}

impl<T: Scalar> Module<T> for DoubleConv<T> {
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

/// MobileNetV2 inverted residual: 1x1 expand, 3x3 depthwise, 1x1 linear
/// projection, identity shortcut when shapes allow.
#[derive(Debug, Clone)]
pub struct InvertedResidual<T> {
    pub expand: Option<ConvBnAct<T>>,
    pub depthwise: ConvBnAct<T>,
    pub project: ConvBnAct<T>,
    pub residual: bool,
}

impl<T: Scalar> InvertedResidual<T> {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        expand_ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = cin * expand_ratio;
        let expand = (expand_ratio != 1).then(|| {
            ConvBnAct::new(
                &format!("{prefix}.expand"),
                Conv2dConfig::new(cin, hidden, 1),
                Activation::Relu6,
                rng,
            )
        });
        let depthwise = ConvBnAct::new(
            &format!("{prefix}.dw"),
            Conv2dConfig::new(hidden, hidden, 3).stride(stride).depthwise(),
            Activation::Relu6,
            rng,
        );
        let project = ConvBnAct::new(
            &format!("{prefix}.project"),
            Conv2dConfig::new(hidden, cout, 1),
            Activation::Identity,
            rng,
        );
        Self {
            expand,
            depthwise,
            project,
            residual: stride == 1 && cin == cout,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = match &self.expand {
            Some(e) => self.depthwise.forward(&e.forward(x)),
            None => self.depthwise.forward(x),
        };
        let mut y = self.project.forward(&h);
        if self.residual {
            y.add_assign(x);
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = match &mut self.expand {
            Some(e) => {
                let e = e.forward_train(x);
                self.depthwise.forward_train(&e)
            }
            None => self.depthwise.forward_train(x),
        };
        let mut y = self.project.forward_train(&h);
        if self.residual {
            y.add_assign(x);
        }
        y
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let shortcut = (self.residual && need_dx).then(|| dy.clone());
        let expand_trainable = self.expand.as_ref().is_some_and(|e| e.any_trainable());
        let dw_needs = need_dx || expand_trainable;
        let project_needs = dw_needs || self.depthwise.any_trainable();
        let mut dx = self
            .project
            .backward(dy, project_needs)
            .and_then(|d| self.depthwise.backward(d, dw_needs))
            .and_then(|d| match &mut self.expand {
                Some(e) => e.backward(d, need_dx),
                None => need_dx.then_some(d),
            });
        if let (Some(dx), Some(s)) = (dx.as_mut(), shortcut.as_ref()) {
            dx.add_assign(s);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for InvertedResidual<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.expand.visit_params(f);
        self.depthwise.visit_params(f);
        self.project.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.expand.visit_params_mut(f);
        self.depthwise.visit_params_mut(f);
        self.project.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.expand.visit_buffers(f);
        self.depthwise.visit_buffers(f);
        self.project.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.expand.visit_buffers_mut(f);
        self.depthwise.visit_buffers_mut(f);
        self.project.visit_buffers_mut(f);
    }
}
